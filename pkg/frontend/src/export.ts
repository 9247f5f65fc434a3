/**
 * Embedding export: run the trained model over a split, capture the hidden
 * dense layer's activations (the penultimate layer) together with the head's
 * logits, and write them in the toolkit's file formats. The head file holds
 * the final dense layer's weights transposed to C x D row-major.
 */

import * as tf from '@tensorflow/tfjs';
import { mkdirSync } from 'fs';
import { join } from 'path';

import { writeCfod, writeCfhd, writeManifest, Manifest } from './binary.js';
import { ID_CLASS_COUNT, IMAGE_SIZE, PIXELS, Split } from './data.js';
import { EMBEDDING_LAYER, HEAD_LAYER } from './model.js';

export interface EmbeddingBatch {
  embeddings: Float32Array; // n * dim
  logits: Float32Array; // n * ID_CLASS_COUNT
  dim: number;
}

/** Width of the penultimate (embedding) layer. */
export function embeddingDim(model: tf.LayersModel): number {
  const shape = (model.getLayer(EMBEDDING_LAYER).output as tf.SymbolicTensor).shape;
  return shape[shape.length - 1] as number;
}

/** Model slice emitting [embedding, logits] for a batch of images. */
export function embeddingModel(model: tf.LayersModel): tf.LayersModel {
  return tf.model({
    inputs: model.inputs,
    outputs: [
      model.getLayer(EMBEDDING_LAYER).output as tf.SymbolicTensor,
      model.getLayer(HEAD_LAYER).output as tf.SymbolicTensor,
    ],
  });
}

export function extractEmbeddings(
  extractor: tf.LayersModel,
  split: Split,
  batchSize = 256,
): EmbeddingBatch {
  const outShape = (extractor.outputs[0] as tf.SymbolicTensor).shape;
  const dim = outShape[outShape.length - 1] as number;
  const embeddings = new Float32Array(split.n * dim);
  const logits = new Float32Array(split.n * ID_CLASS_COUNT);
  for (let start = 0; start < split.n; start += batchSize) {
    const count = Math.min(batchSize, split.n - start);
    const [emb, log] = tf.tidy(() => {
      const xs = tf.tensor4d(
        split.images.subarray(start * PIXELS, (start + count) * PIXELS),
        [count, IMAGE_SIZE, IMAGE_SIZE, 1],
      );
      return extractor.predict(xs) as tf.Tensor[];
    });
    embeddings.set(emb.dataSync() as Float32Array, start * dim);
    logits.set(log.dataSync() as Float32Array, start * ID_CLASS_COUNT);
    emb.dispose();
    log.dispose();
  }
  return { embeddings, logits, dim };
}

export interface HeadArrays {
  weights: Float32Array; // c * d, row-major
  bias: Float32Array;
  c: number;
  d: number;
}

/** The final dense layer as C x D weights (tfjs stores kernels as D x C). */
export function extractHead(model: tf.LayersModel): HeadArrays {
  const [kernel, bias] = model.getLayer(HEAD_LAYER).getWeights();
  const transposed = tf.tidy(() => kernel.transpose());
  const weights = transposed.dataSync() as Float32Array;
  transposed.dispose();
  return {
    weights: Float32Array.from(weights),
    bias: Float32Array.from(bias.dataSync() as Float32Array),
    c: kernel.shape[1] as number,
    d: kernel.shape[0] as number,
  };
}

/**
 * Affine-map consistency: W.z + b must reproduce the exported logits for
 * every row within float32 tolerance. Returns the largest absolute gap.
 */
export function headConsistencyGap(head: HeadArrays, batch: EmbeddingBatch, n: number): number {
  let worst = 0;
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < head.c; c++) {
      let acc = head.bias[c];
      for (let j = 0; j < head.d; j++) {
        acc += head.weights[c * head.d + j] * batch.embeddings[i * head.d + j];
      }
      const gap = Math.abs(acc - batch.logits[i * head.c + c]);
      if (gap > worst) worst = gap;
    }
  }
  return worst;
}

export interface ExportPaths {
  dir: string;
  headPath: string;
  manifests: Record<'train' | 'test' | 'ood', string>;
}

export function exportSplits(
  model: tf.LayersModel,
  splits: { train: Split; test: Split; ood: Split },
  outDir: string,
): ExportPaths {
  mkdirSync(outDir, { recursive: true });
  const extractor = embeddingModel(model);
  const head = extractHead(model);
  const dim = embeddingDim(model);
  if (head.d !== dim || head.c !== ID_CLASS_COUNT) {
    throw new Error(`head is ${head.c}x${head.d}, expected ${ID_CLASS_COUNT}x${dim}`);
  }
  const headPath = join(outDir, 'head.cfhd');
  writeCfhd(headPath, { weights: head.weights, bias: head.bias, c: head.c, d: head.d });

  const manifests = {} as Record<'train' | 'test' | 'ood', string>;
  for (const name of ['train', 'test', 'ood'] as const) {
    const split = splits[name];
    const batch = extractEmbeddings(extractor, split);
    const gap = headConsistencyGap(head, batch, split.n);
    if (gap > 1e-4) {
      throw new Error(`head/embedding consistency gap ${gap} exceeds 1e-4 for ${name}`);
    }
    const cfodPath = join(outDir, `${name}.cfod`);
    writeCfod(cfodPath, {
      features: batch.embeddings,
      labels: split.labels,
      n: split.n,
      d: dim,
      c: ID_CLASS_COUNT,
      logits: batch.logits,
      refs: split.refs,
    });
    const manifest: Manifest = {
      features_path: `${name}.cfod`,
      head_path: 'head.cfhd',
      refs_path: `${name}.cfod.refs`,
      n: split.n,
      d: dim,
      c: ID_CLASS_COUNT,
      space: 'embedding-space',
    };
    const manifestPath = join(outDir, `${name}.json`);
    writeManifest(manifestPath, manifest);
    manifests[name] = manifestPath;
  }
  return { dir: outDir, headPath, manifests };
}
