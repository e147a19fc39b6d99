/**
 * Record-stream codec, byte-compatible with the Python reader/writer.
 *
 * Layout: 4-byte ASCII magic, u32 version, then records until EOF. Each
 * record is name-length u16, utf-8 name, dtype u8 (0 = float32, 1 = uint8),
 * rank u8, dims u32 x rank, row-major payload. Everything little-endian.
 */
import { readFileSync, writeFileSync } from "node:fs";

export const EPISODE_MAGIC = "PGME";
export const VERSION = 1;

export type DType = "f32" | "u8";

export interface Rec {
  dtype: DType;
  dims: number[];
  data: Float32Array | Uint8Array;
}

const DTYPE_CODE: Record<DType, number> = { f32: 0, u8: 1 };

function elemCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

/** Build a float32 record, checking that dims and payload agree. */
export function f32(dims: number[], data: Float32Array | number[]): Rec {
  const arr = data instanceof Float32Array ? data : Float32Array.from(data);
  if (arr.length !== elemCount(dims)) {
    throw new Error(`f32 record: ${arr.length} values do not fill dims [${dims}]`);
  }
  return { dtype: "f32", dims: [...dims], data: arr };
}

/** Build a uint8 record, checking that dims and payload agree. */
export function u8(dims: number[], data: Uint8Array | number[]): Rec {
  const arr = data instanceof Uint8Array ? data : Uint8Array.from(data);
  if (arr.length !== elemCount(dims)) {
    throw new Error(`u8 record: ${arr.length} values do not fill dims [${dims}]`);
  }
  return { dtype: "u8", dims: [...dims], data: arr };
}

function encodeRecord(name: string, rec: Rec): Buffer {
  const nameBytes = Buffer.from(name, "utf-8");
  if (nameBytes.length > 0xffff) {
    throw new Error(`record name too long: ${name.slice(0, 40)}...`);
  }
  if (rec.dims.length === 0 || rec.dims.length > 0xff) {
    throw new Error(`record ${name}: rank must be in [1, 255], got ${rec.dims.length}`);
  }
  const head = Buffer.alloc(2 + nameBytes.length + 2 + 4 * rec.dims.length);
  let pos = head.writeUInt16LE(nameBytes.length, 0);
  pos += nameBytes.copy(head, pos);
  pos = head.writeUInt8(DTYPE_CODE[rec.dtype], pos);
  pos = head.writeUInt8(rec.dims.length, pos);
  for (const d of rec.dims) pos = head.writeUInt32LE(d, pos);

  let payload: Buffer<ArrayBuffer>;
  if (rec.dtype === "u8") {
    payload = Buffer.from(rec.data as Uint8Array);
  } else {
    const arr = rec.data as Float32Array;
    payload = Buffer.alloc(4 * arr.length);
    for (let i = 0; i < arr.length; i++) payload.writeFloatLE(arr[i], 4 * i);
  }
  return Buffer.concat([head, payload]);
}

/** Serialize records in map iteration order. */
export function encodeRecords(records: Map<string, Rec>, magic = EPISODE_MAGIC): Buffer {
  const head = Buffer.alloc(8);
  head.write(magic, 0, "ascii");
  head.writeUInt32LE(VERSION, 4);
  const chunks: Uint8Array[] = [head];
  for (const [name, rec] of records) chunks.push(encodeRecord(name, rec));
  return Buffer.concat(chunks);
}

export function writeRecords(path: string, records: Map<string, Rec>, magic = EPISODE_MAGIC): void {
  writeFileSync(path, encodeRecords(records, magic));
}

class Cursor {
  pos = 0;
  constructor(private buf: Buffer) {}

  take(n: number, what: string): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new Error(`unexpected end of file while reading ${what}`);
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  get done(): boolean {
    return this.pos >= this.buf.length;
  }
}

/** Parse a record buffer; throws descriptive errors on malformed input. */
export function decodeRecords(buf: Buffer, magic = EPISODE_MAGIC): Map<string, Rec> {
  const cur = new Cursor(buf);
  const head = cur.take(4, "magic").toString("ascii");
  if (head !== magic) {
    throw new Error(`expected magic ${JSON.stringify(magic)}, found ${JSON.stringify(head)}`);
  }
  const version = cur.take(4, "version").readUInt32LE(0);
  if (version !== VERSION) {
    throw new Error(`unsupported version ${version} (expected ${VERSION})`);
  }
  const records = new Map<string, Rec>();
  while (!cur.done) {
    const nameLen = cur.take(2, "name length").readUInt16LE(0);
    const name = cur.take(nameLen, "record name").toString("utf-8");
    const meta = cur.take(2, `${name} header`);
    const code = meta[0];
    const rank = meta[1];
    if (code !== 0 && code !== 1) {
      throw new Error(`record ${JSON.stringify(name)}: dtype code ${code}`);
    }
    const dimsBuf = cur.take(4 * rank, `${name} dims`);
    const dims: number[] = [];
    for (let i = 0; i < rank; i++) dims.push(dimsBuf.readUInt32LE(4 * i));
    const n = elemCount(dims);
    if (code === 1) {
      const payload = cur.take(n, `${name} payload`);
      records.set(name, { dtype: "u8", dims, data: Uint8Array.from(payload) });
    } else {
      const payload = cur.take(4 * n, `${name} payload`);
      const arr = new Float32Array(n);
      for (let i = 0; i < n; i++) arr[i] = payload.readFloatLE(4 * i);
      records.set(name, { dtype: "f32", dims, data: arr });
    }
  }
  return records;
}

export function readRecords(path: string, magic = EPISODE_MAGIC): Map<string, Rec> {
  return decodeRecords(readFileSync(path), magic);
}
