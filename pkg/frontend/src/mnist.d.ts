declare module 'mnist' {
  interface DigitSet {
    raw: number[]; // all images of the digit, flattened (length * 784)
    length: number;
    get(index?: number): number[];
  }
  const mnist: Record<number, DigitSet> & {
    set(training: number, test: number): { training: unknown[]; test: unknown[] };
  };
  export default mnist;
}
