/**
 * MNIST splits for the case study: digits 0-5 are the known (ID) classes,
 * digits 6-9 are withheld as OOD. Images come from the bundled `mnist`
 * package (~1,000 images per digit, 28x28 grayscale in [0,1]).
 *
 * OOD rows carry placeholder label 0 (the file format requires labels in
 * [0,C)); the true digit is preserved in each row's ref string.
 */

import mnist from 'mnist';

export const IMAGE_SIZE = 28;
export const PIXELS = IMAGE_SIZE * IMAGE_SIZE;
export const ID_DIGITS = [0, 1, 2, 3, 4, 5];
export const OOD_DIGITS = [6, 7, 8, 9];
export const ID_CLASS_COUNT = ID_DIGITS.length;

export interface Split {
  images: Float32Array; // n * PIXELS
  labels: Int32Array; // class indices in [0, ID_CLASS_COUNT)
  refs: string[]; // "mnist:<split>:<true digit>:<sequence>"
  n: number;
}

/** Deterministic 32-bit PRNG (mulberry32) for reproducible shuffles. */
export function seededRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffled<T>(items: T[], rng: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

function digitImages(digit: number): number[][] {
  // the package stores each digit's pool as one flat pixel array
  const set = (mnist as unknown as Record<number, { raw: number[]; length: number }>)[digit];
  const out: number[][] = new Array(set.length);
  for (let i = 0; i < set.length; i++) {
    out[i] = set.raw.slice(i * PIXELS, (i + 1) * PIXELS);
  }
  return out;
}

interface Row {
  pixels: number[];
  label: number;
  ref: string;
}

function pack(rows: Row[]): Split {
  const n = rows.length;
  const images = new Float32Array(n * PIXELS);
  const labels = new Int32Array(n);
  const refs: string[] = new Array(n);
  rows.forEach((row, i) => {
    images.set(row.pixels, i * PIXELS);
    labels[i] = row.label;
    refs[i] = row.ref;
  });
  return { images, labels, refs, n };
}

export interface CaseStudyData {
  train: Split;
  test: Split;
  ood: Split;
}

/**
 * Split each ID digit's pool into train/test after a seeded shuffle; all
 * images of the withheld digits become OOD. `trainPerDigit` caps the number
 * of training images taken from each ID digit.
 */
export function loadCaseStudy(seed: number, trainPerDigit = 800): CaseStudyData {
  const rng = seededRng(seed);
  const trainRows: Row[] = [];
  const testRows: Row[] = [];
  for (const digit of ID_DIGITS) {
    const pool = shuffled(digitImages(digit), rng);
    pool.forEach((pixels, i) => {
      const row = { pixels, label: digit, ref: `mnist:${i < trainPerDigit ? 'train' : 'test'}:${digit}:${i}` };
      (i < trainPerDigit ? trainRows : testRows).push(row);
    });
  }
  const oodRows: Row[] = [];
  for (const digit of OOD_DIGITS) {
    digitImages(digit).forEach((pixels, i) => {
      oodRows.push({ pixels, label: 0, ref: `mnist:ood:${digit}:${i}` });
    });
  }
  // interleave classes so mini-batches are mixed without a training-time shuffle
  const order = shuffled(trainRows.map((_, i) => i), rng);
  const shuffledTrain = order.map((i) => trainRows[i]);
  return {
    train: pack(shuffledTrain),
    test: pack(testRows),
    ood: pack(oodRows),
  };
}
