/**
 * Train the case-study CNN on MNIST digits 0-5 and export embeddings,
 * logits, head weights and manifests for the cfood toolkit.
 *
 *   node dist/cli.js [--out DIR] [--seed N] [--epochs N] [--batch-size N]
 *                    [--train-per-digit N] [--min-accuracy F] [--load DIR]
 *
 * Exits nonzero when the trained model misses the ID accuracy floor.
 */

import { writeFileSync } from 'fs';
import { join } from 'path';

import { loadCaseStudy } from './data.js';
import {
  buildModel,
  DEFAULT_SHAPE,
  evaluateAccuracy,
  loadCheckpoint,
  ModelShape,
  saveCheckpoint,
  trainModel,
} from './model.js';
import { exportSplits } from './export.js';

interface Args {
  out: string;
  seed: number;
  epochs: number;
  batchSize: number;
  trainPerDigit: number;
  minAccuracy: number;
  shape: ModelShape;
  load?: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    out: 'artifacts/mnist',
    seed: 7,
    epochs: 4,
    batchSize: 128,
    trainPerDigit: 800,
    minAccuracy: 0.97,
    shape: { ...DEFAULT_SHAPE },
  };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for ${key}`);
    switch (key) {
      case '--out': args.out = value; break;
      case '--seed': args.seed = Number(value); break;
      case '--epochs': args.epochs = Number(value); break;
      case '--batch-size': args.batchSize = Number(value); break;
      case '--train-per-digit': args.trainPerDigit = Number(value); break;
      case '--min-accuracy': args.minAccuracy = Number(value); break;
      case '--filters': {
        const parts = value.split(',').map(Number);
        if (parts.length !== 2 || parts.some(Number.isNaN)) throw new Error('--filters wants "a,b"');
        args.shape.filters = [parts[0], parts[1]];
        break;
      }
      case '--embedding-units': args.shape.embeddingUnits = Number(value); break;
      case '--embedding-activation': {
        if (value !== 'relu' && value !== 'linear') throw new Error('--embedding-activation wants relu|linear');
        args.shape.embeddingActivation = value;
        break;
      }
      case '--load': args.load = value; break;
      default: throw new Error(`unknown flag ${key}`);
    }
  }
  return args;
}

export async function run(argv: string[]): Promise<number> {
  const args = parseArgs(argv);
  const data = loadCaseStudy(args.seed, args.trainPerDigit);
  console.log(
    `splits: train=${data.train.n} test=${data.test.n} ood=${data.ood.n} (seed ${args.seed})`,
  );

  let model;
  if (args.load) {
    console.log(`loading checkpoint from ${args.load}`);
    model = await loadCheckpoint(args.load);
  } else {
    const fresh = buildModel(args.seed, args.shape);
    console.log(`training: ${args.epochs} epochs, batch size ${args.batchSize}`);
    const started = Date.now();
    await trainModel(fresh, data.train, {
      epochs: args.epochs,
      batchSize: args.batchSize,
      verbose: true,
    });
    console.log(`trained in ${((Date.now() - started) / 1000).toFixed(1)}s`);
    model = fresh;
  }

  const trainAcc = evaluateAccuracy(model as never, data.train);
  const testAcc = evaluateAccuracy(model as never, data.test);
  console.log(`ID accuracy: train ${(trainAcc * 100).toFixed(2)}%, test ${(testAcc * 100).toFixed(2)}%`);
  if (testAcc < args.minAccuracy) {
    console.error(
      `ID test accuracy ${(testAcc * 100).toFixed(2)}% is below the ` +
        `${(args.minAccuracy * 100).toFixed(0)}% floor; not exporting`,
    );
    return 1;
  }

  if (!args.load) {
    const ckpt = await saveCheckpoint(model as never, join(args.out, 'checkpoint'));
    console.log(`checkpoint: ${ckpt.topologyPath}`);
  }
  const paths = exportSplits(model, data, args.out);
  writeFileSync(
    join(args.out, 'summary.json'),
    JSON.stringify(
      {
        seed: args.seed,
        epochs: args.epochs,
        train_per_digit: args.trainPerDigit,
        shape: args.shape,
        id_train_accuracy: trainAcc,
        id_test_accuracy: testAcc,
        counts: { train: data.train.n, test: data.test.n, ood: data.ood.n },
        manifests: paths.manifests,
      },
      null,
      2,
    ) + '\n',
  );
  console.log(`exported to ${paths.dir}`);
  return 0;
}

const isMain = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (isMain) {
  run(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(err);
      process.exit(1);
    },
  );
}
