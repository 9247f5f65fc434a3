/**
 * Writers (and readers, used by the tests) for the toolkit's binary formats.
 *
 * CFOD: "CFOD" magic, little-endian u64 N/D/C, u8 flags (bit0 logits,
 * bit1 refs sidecar), then float32 features row-major, int32 labels, and
 * optional float32 logits row-major. Refs live in a UTF-8 sidecar with one
 * line per row at `<file>.refs`. CFHD: "CFHD" magic, u64 C/D, float32 weights
 * row-major (C x D), float32 bias.
 */

import { writeFileSync, readFileSync } from 'fs';

const FLAG_LOGITS = 0x01;
const FLAG_REFS = 0x02;

function assertLittleEndian(): void {
  // the typed-array fast path below assumes a little-endian host
  const probe = new Uint8Array(new Uint32Array([1]).buffer);
  if (probe[0] !== 1) {
    throw new Error('big-endian hosts are not supported by the fast writer');
  }
}

export interface DatasetPayload {
  features: Float32Array; // n * d, row-major
  labels: Int32Array;
  n: number;
  d: number;
  c: number;
  logits?: Float32Array; // n * c, row-major
  refs?: string[];
}

export function writeCfod(path: string, data: DatasetPayload): void {
  assertLittleEndian();
  const { features, labels, n, d, c, logits, refs } = data;
  if (features.length !== n * d) throw new Error('features length != n*d');
  if (labels.length !== n) throw new Error('labels length != n');
  if (logits && logits.length !== n * c) throw new Error('logits length != n*c');
  if (refs && refs.length !== n) throw new Error('refs length != n');

  const flags = (logits ? FLAG_LOGITS : 0) | (refs ? FLAG_REFS : 0);
  const header = Buffer.alloc(4 + 24 + 1);
  header.write('CFOD', 0, 'ascii');
  header.writeBigUInt64LE(BigInt(n), 4);
  header.writeBigUInt64LE(BigInt(d), 12);
  header.writeBigUInt64LE(BigInt(c), 20);
  header.writeUInt8(flags, 28);

  const parts = [
    header,
    Buffer.from(features.buffer, features.byteOffset, features.byteLength),
    Buffer.from(labels.buffer, labels.byteOffset, labels.byteLength),
  ];
  if (logits) {
    parts.push(Buffer.from(logits.buffer, logits.byteOffset, logits.byteLength));
  }
  writeFileSync(path, Buffer.concat(parts));
  if (refs) {
    for (const r of refs) {
      if (r.includes('\n')) throw new Error('refs must not contain newlines');
    }
    writeFileSync(`${path}.refs`, refs.join('\n') + '\n', 'utf-8');
  }
}

export interface HeadPayload {
  weights: Float32Array; // c * d, row-major
  bias: Float32Array;
  c: number;
  d: number;
}

export function writeCfhd(path: string, head: HeadPayload): void {
  assertLittleEndian();
  if (head.weights.length !== head.c * head.d) throw new Error('weights length != c*d');
  if (head.bias.length !== head.c) throw new Error('bias length != c');
  const header = Buffer.alloc(4 + 16);
  header.write('CFHD', 0, 'ascii');
  header.writeBigUInt64LE(BigInt(head.c), 4);
  header.writeBigUInt64LE(BigInt(head.d), 12);
  writeFileSync(
    path,
    Buffer.concat([
      header,
      Buffer.from(head.weights.buffer, head.weights.byteOffset, head.weights.byteLength),
      Buffer.from(head.bias.buffer, head.bias.byteOffset, head.bias.byteLength),
    ]),
  );
}

export interface Manifest {
  features_path: string;
  head_path: string | null;
  refs_path: string | null;
  n: number;
  d: number;
  c: number;
  space: 'input-space' | 'embedding-space';
}

export function writeManifest(path: string, manifest: Manifest): void {
  const keys = Object.keys(manifest).sort() as (keyof Manifest)[];
  const sorted: Record<string, unknown> = {};
  for (const k of keys) sorted[k] = manifest[k];
  writeFileSync(path, JSON.stringify(sorted, null, 2) + '\n', 'utf-8');
}

/** Aligned copy: the 29-byte header leaves payloads unaligned in the file. */
function sliceAligned(buf: Buffer, off: number, bytes: number): ArrayBuffer {
  return buf.buffer.slice(buf.byteOffset + off, buf.byteOffset + off + bytes) as ArrayBuffer;
}

export function readCfod(path: string): DatasetPayload {
  assertLittleEndian();
  const buf = readFileSync(path);
  if (buf.toString('ascii', 0, 4) !== 'CFOD') throw new Error('bad magic');
  const n = Number(buf.readBigUInt64LE(4));
  const d = Number(buf.readBigUInt64LE(12));
  const c = Number(buf.readBigUInt64LE(20));
  const flags = buf.readUInt8(28);
  let off = 29;
  const features = new Float32Array(sliceAligned(buf, off, 4 * n * d));
  off += 4 * n * d;
  const labels = new Int32Array(sliceAligned(buf, off, 4 * n));
  off += 4 * n;
  let logits: Float32Array | undefined;
  if (flags & FLAG_LOGITS) {
    logits = new Float32Array(sliceAligned(buf, off, 4 * n * c));
    off += 4 * n * c;
  }
  if (off !== buf.length) throw new Error('size mismatch');
  let refs: string[] | undefined;
  if (flags & FLAG_REFS) {
    const text = readFileSync(`${path}.refs`, 'utf-8');
    refs = text.split('\n');
    if (refs[refs.length - 1] === '') refs.pop();
    if (refs.length !== n) throw new Error('refs sidecar length mismatch');
  }
  return { features, labels, n, d, c, logits, refs };
}

export function readCfhd(path: string): HeadPayload {
  assertLittleEndian();
  const buf = readFileSync(path);
  if (buf.toString('ascii', 0, 4) !== 'CFHD') throw new Error('bad magic');
  const c = Number(buf.readBigUInt64LE(4));
  const d = Number(buf.readBigUInt64LE(12));
  const weights = new Float32Array(sliceAligned(buf, 20, 4 * c * d));
  const bias = new Float32Array(sliceAligned(buf, 20 + 4 * c * d, 4 * c));
  if (20 + 4 * c * d + 4 * c !== buf.length) throw new Error('size mismatch');
  return { weights, bias, c, d };
}
