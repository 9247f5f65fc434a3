/**
 * The case-study CNN: two convolution+pool blocks, one hidden dense layer
 * (the embedding, and the penultimate layer), and a 6-way linear head.
 * All initializers are seeded and training runs without shuffling, so a
 * fixed seed reproduces the same weights.
 */

import * as tf from '@tensorflow/tfjs';
import { ID_CLASS_COUNT, IMAGE_SIZE, PIXELS, Split } from './data.js';

export const DEFAULT_EMBEDDING_UNITS = 64;
export const EMBEDDING_LAYER = 'embedding';
export const HEAD_LAYER = 'head';

export interface ModelShape {
  filters: [number, number];
  embeddingUnits: number;
  embeddingActivation: 'relu' | 'linear';
}

export const DEFAULT_SHAPE: ModelShape = {
  filters: [4, 8],
  embeddingUnits: DEFAULT_EMBEDDING_UNITS,
  embeddingActivation: 'relu',
};

export function buildModel(seed: number, shape: ModelShape = DEFAULT_SHAPE): tf.Sequential {
  const init = (offset: number) => tf.initializers.glorotUniform({ seed: seed + offset });
  const model = tf.sequential();
  model.add(
    tf.layers.conv2d({
      inputShape: [IMAGE_SIZE, IMAGE_SIZE, 1],
      filters: shape.filters[0],
      kernelSize: 3,
      activation: 'relu',
      kernelInitializer: init(1),
    }),
  );
  model.add(tf.layers.maxPooling2d({ poolSize: 2 }));
  model.add(
    tf.layers.conv2d({
      filters: shape.filters[1],
      kernelSize: 3,
      activation: 'relu',
      kernelInitializer: init(2),
    }),
  );
  model.add(tf.layers.maxPooling2d({ poolSize: 2 }));
  model.add(tf.layers.flatten());
  model.add(
    tf.layers.dense({
      units: shape.embeddingUnits,
      activation: shape.embeddingActivation === 'relu' ? 'relu' : undefined,
      kernelInitializer: init(3),
      name: EMBEDDING_LAYER,
    }),
  );
  model.add(tf.layers.dense({ units: ID_CLASS_COUNT, kernelInitializer: init(4), name: HEAD_LAYER }));
  model.add(tf.layers.softmax());
  return model;
}

export function toImageTensor(split: Split): tf.Tensor4D {
  return tf.tensor4d(split.images, [split.n, IMAGE_SIZE, IMAGE_SIZE, 1]);
}

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  verbose: boolean;
}

export async function trainModel(
  model: tf.Sequential,
  train: Split,
  opts: TrainOptions,
): Promise<void> {
  model.compile({ optimizer: tf.train.adam(1e-3), loss: 'categoricalCrossentropy' });
  const xs = toImageTensor(train);
  const ys = tf.oneHot(tf.tensor1d(train.labels, 'int32'), ID_CLASS_COUNT);
  try {
    await model.fit(xs, ys, {
      epochs: opts.epochs,
      batchSize: opts.batchSize,
      shuffle: false, // data.ts already interleaved classes with a seeded shuffle
      verbose: opts.verbose ? 1 : 0,
    });
  } finally {
    xs.dispose();
    ys.dispose();
  }
}

/** Accuracy of the model's argmax against the split's labels. */
export function evaluateAccuracy(model: tf.Sequential, split: Split, batchSize = 256): number {
  let correct = 0;
  for (let start = 0; start < split.n; start += batchSize) {
    const count = Math.min(batchSize, split.n - start);
    const preds = tf.tidy(() => {
      const xs = tf.tensor4d(
        split.images.subarray(start * PIXELS, (start + count) * PIXELS),
        [count, IMAGE_SIZE, IMAGE_SIZE, 1],
      );
      return (model.predict(xs) as tf.Tensor).argMax(-1);
    });
    const got = preds.dataSync();
    preds.dispose();
    for (let i = 0; i < count; i++) {
      if (got[i] === split.labels[start + i]) correct++;
    }
  }
  return correct / split.n;
}

export interface CheckpointFiles {
  topologyPath: string;
  weightsPath: string;
}

/** Minimal file checkpointing (the pure-JS backend has no file:// handler). */
export async function saveCheckpoint(model: tf.Sequential, dir: string): Promise<CheckpointFiles> {
  const { mkdirSync, writeFileSync } = await import('fs');
  mkdirSync(dir, { recursive: true });
  const paths = { topologyPath: `${dir}/model.json`, weightsPath: `${dir}/weights.bin` };
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      writeFileSync(
        paths.topologyPath,
        JSON.stringify(
          {
            modelTopology: artifacts.modelTopology,
            weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
          },
          null,
          2,
        ),
      );
      writeFileSync(paths.weightsPath, Buffer.from(artifacts.weightData as ArrayBuffer));
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
    }),
  );
  return paths;
}

export async function loadCheckpoint(dir: string): Promise<tf.LayersModel> {
  const { readFileSync } = await import('fs');
  const spec = JSON.parse(readFileSync(`${dir}/model.json`, 'utf-8'));
  const weightData = readFileSync(`${dir}/weights.bin`);
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: spec.modelTopology,
      weightSpecs: spec.weightsManifest[0].weights,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  );
}
