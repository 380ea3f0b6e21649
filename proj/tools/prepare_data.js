#!/usr/bin/env node
// Builds the bundled MNIST subset under data/.
//
// Source: the `mnist` npm package (https://www.npmjs.com/package/mnist),
// which ships ~10k MNIST digits as normalized [0,1] grayscale arrays.
// For each class 0..9 we take the first 700 digits for training and the
// next 160 for testing, downsample 28x28 -> 14x14 by 2x2 mean pooling,
// and emit IDX files (big-endian headers, one byte per pixel).
//
// Usage:
//   npm install mnist
//   node tools/prepare_data.js [--mnist-dir <node_modules/mnist/src/digits>] [--out data]
//
// The output is deterministic: same package version -> identical bytes.

const fs = require('fs');
const path = require('path');

function parseArgs(argv) {
  const args = { mnistDir: null, out: 'data' };
  for (let i = 2; i < argv.length; i++) {
    if (argv[i] === '--mnist-dir') args.mnistDir = argv[++i];
    else if (argv[i] === '--out') args.out = argv[++i];
    else throw new Error('unknown argument: ' + argv[i]);
  }
  if (!args.mnistDir) {
    const candidates = [
      path.join(__dirname, '..', 'node_modules', 'mnist', 'src', 'digits'),
      path.join(process.cwd(), 'node_modules', 'mnist', 'src', 'digits'),
    ];
    args.mnistDir = candidates.find((p) => fs.existsSync(p));
    if (!args.mnistDir) {
      throw new Error('mnist package not found; run `npm install mnist` or pass --mnist-dir');
    }
  }
  return args;
}

function downsample(flat, offset) {
  // 2x2 mean over the 28x28 grid, then quantize back to a byte.
  const out = Buffer.alloc(14 * 14);
  for (let r = 0; r < 14; r++) {
    for (let c = 0; c < 14; c++) {
      const base = offset + 2 * r * 28 + 2 * c;
      const mean = (flat[base] + flat[base + 1] + flat[base + 28] + flat[base + 29]) / 4;
      out[r * 14 + c] = Math.round(mean * 255);
    }
  }
  return out;
}

function writeIdxImages(file, records) {
  const header = Buffer.alloc(16);
  header.writeUInt32BE(0x00000803, 0);
  header.writeUInt32BE(records.length, 4);
  header.writeUInt32BE(14, 8);
  header.writeUInt32BE(14, 12);
  fs.writeFileSync(file, Buffer.concat([header, ...records]));
}

function writeIdxLabels(file, labels) {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(0x00000801, 0);
  header.writeUInt32BE(labels.length, 4);
  fs.writeFileSync(file, Buffer.concat([header, Buffer.from(labels)]));
}

function main() {
  const args = parseArgs(process.argv);
  const TRAIN_PER_CLASS = 700;
  const TEST_PER_CLASS = 160;

  const train = { images: [], labels: [] };
  const test = { images: [], labels: [] };
  for (let c = 0; c <= 9; c++) {
    const digit = JSON.parse(fs.readFileSync(path.join(args.mnistDir, c + '.json'), 'utf8'));
    const flat = digit.data;
    const count = flat.length / 784;
    if (count < TRAIN_PER_CLASS + TEST_PER_CLASS) {
      throw new Error('class ' + c + ' has only ' + count + ' digits');
    }
    for (let i = 0; i < TRAIN_PER_CLASS + TEST_PER_CLASS; i++) {
      const img = downsample(flat, i * 784);
      if (i < TRAIN_PER_CLASS) {
        train.images.push(img);
        train.labels.push(c);
      } else {
        test.images.push(img);
        test.labels.push(c);
      }
    }
  }

  fs.mkdirSync(args.out, { recursive: true });
  writeIdxImages(path.join(args.out, 'train-images-idx3-ubyte'), train.images);
  writeIdxLabels(path.join(args.out, 'train-labels-idx1-ubyte'), train.labels);
  writeIdxImages(path.join(args.out, 'test-images-idx3-ubyte'), test.images);
  writeIdxLabels(path.join(args.out, 'test-labels-idx1-ubyte'), test.labels);
  console.log('wrote', train.labels.length, 'train and', test.labels.length, 'test records to', args.out);
}

main();
