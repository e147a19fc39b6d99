/**
 * Binary PGM (P5) image IO — the one raster format simple enough to handle
 * without pulling in an image library. Masks are PGMs where any pixel above
 * half intensity counts as foreground.
 */
import { readFileSync, writeFileSync } from "node:fs";

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major, one byte per pixel. */
  data: Uint8Array;
}

/** Read header tokens, honoring '#' comments that run to end of line. */
function nextToken(buf: Buffer, pos: number): [string, number] {
  while (pos < buf.length) {
    const c = buf[pos];
    if (c === 0x23) {
      // '#': skip comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
      pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
  if (start === pos) throw new Error("truncated PGM header");
  return [buf.subarray(start, pos).toString("ascii"), pos];
}

export function decodePgm(buf: Buffer): GrayImage {
  let pos = 0;
  let tok: string;
  [tok, pos] = nextToken(buf, pos);
  if (tok !== "P5") throw new Error(`not a binary PGM (P5) file: magic ${JSON.stringify(tok)}`);
  let w: string, h: string, maxval: string;
  [w, pos] = nextToken(buf, pos);
  [h, pos] = nextToken(buf, pos);
  [maxval, pos] = nextToken(buf, pos);
  const width = Number(w);
  const height = Number(h);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error(`bad PGM dimensions ${w} x ${h}`);
  }
  if (Number(maxval) > 255) throw new Error(`16-bit PGM not supported (maxval ${maxval})`);
  pos += 1; // single whitespace byte separates header from pixels
  const need = width * height;
  if (pos + need > buf.length) {
    throw new Error(`truncated PGM pixel data: need ${need} bytes, have ${buf.length - pos}`);
  }
  return { width, height, data: Uint8Array.from(buf.subarray(pos, pos + need)) };
}

export function readPgm(path: string): GrayImage {
  return decodePgm(readFileSync(path));
}

export function encodePgm(img: GrayImage): Buffer {
  if (img.data.length !== img.width * img.height) {
    throw new Error(`pixel count ${img.data.length} != ${img.width}x${img.height}`);
  }
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(img.data)]);
}

export function writePgm(path: string, img: GrayImage): void {
  writeFileSync(path, encodePgm(img));
}

/** Binarize a mask image: any pixel above half intensity is foreground. */
export function toBinaryMask(img: GrayImage): Uint8Array {
  const out = new Uint8Array(img.data.length);
  for (let i = 0; i < img.data.length; i++) out[i] = img.data[i] >= 128 ? 1 : 0;
  return out;
}
