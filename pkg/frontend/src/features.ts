/**
 * Stand-in backbone: turns a gray image into the multi-stage feature stack
 * and text-aligned map the segmentation pipeline expects, with no model
 * weights. Level features are per-cell pixel statistics pushed through
 * fixed hash-seeded projections — they never look at annotations, like a
 * real frozen backbone. The text-aligned map is the one place annotations
 * leak in: a desk-scale exporter has no semantics of its own, so it points
 * the class vector at the annotated region (or at bright-region saliency
 * when no annotation exists) to emulate genuine image-text alignment.
 */
import { hashVector } from "./embed.js";
import { GrayImage } from "./pgm.js";

export interface StackOptions {
  /** Square grid side per stage, coarse to fine, e.g. [8, 16]. */
  grids: number[];
  /** Feature levels emitted per stage, e.g. [2, 2]. */
  layersPerStage: number[];
  featDim: number;
  textDim: number;
}

export interface FeatureStack {
  /** stages[s][l] is row-major (grid, grid, featDim) float32. */
  stages: Float32Array[][];
  /** Row-major (clipGrid, clipGrid, textDim); lives in text-embedding space. */
  clip: Float32Array;
  clipGrid: number;
  height: number;
  width: number;
}

export function validateOptions(opts: StackOptions): void {
  if (opts.grids.length === 0 || opts.grids.length !== opts.layersPerStage.length) {
    throw new Error(`grids ${JSON.stringify(opts.grids)} and layersPerStage ` +
      `${JSON.stringify(opts.layersPerStage)} must align and be nonempty`);
  }
  for (let s = 1; s < opts.grids.length; s++) {
    if (opts.grids[s] < opts.grids[s - 1]) throw new Error("grids must go coarse to fine");
  }
  if (opts.featDim <= 0 || opts.textDim <= 0) throw new Error("dims must be positive");
}

/** Pixel range of grid cell i along an axis of `size` pixels. */
function cellBounds(size: number, grid: number, i: number): [number, number] {
  const lo = Math.floor((i * size) / grid);
  const hi = Math.max(lo + 1, Math.floor(((i + 1) * size) / grid));
  return [lo, Math.min(hi, size)];
}

interface CellStats {
  mean: number;
  std: number;
  gx: number;
  gy: number;
  fg: number;
}

/** Per-cell brightness/gradient stats plus mask coverage over a grid. */
function gridStats(img: GrayImage, mask: Uint8Array | null, grid: number): CellStats[] {
  const { width: w, height: h, data } = img;
  const out: CellStats[] = [];
  for (let ci = 0; ci < grid; ci++) {
    const [y0, y1] = cellBounds(h, grid, ci);
    for (let cj = 0; cj < grid; cj++) {
      const [x0, x1] = cellBounds(w, grid, cj);
      let sum = 0;
      let sq = 0;
      let gx = 0;
      let gy = 0;
      let fg = 0;
      let n = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          const v = data[y * w + x] / 255;
          sum += v;
          sq += v * v;
          if (x + 1 < w) gx += Math.abs(data[y * w + x + 1] / 255 - v);
          if (y + 1 < h) gy += Math.abs(data[(y + 1) * w + x] / 255 - v);
          if (mask && mask[y * w + x]) fg++;
          n++;
        }
      }
      const mean = sum / n;
      out.push({
        mean,
        std: Math.sqrt(Math.max(sq / n - mean * mean, 0)),
        gx: gx / n,
        gy: gy / n,
        fg: fg / n,
      });
    }
  }
  return out;
}

const N_STATS = 5;

function levelFeatures(stats: CellStats[], grid: number, featDim: number, tag: string): Float32Array {
  const rows: Float64Array[] = [];
  for (let r = 0; r < N_STATS; r++) rows.push(hashVector(`${tag}:row${r}`, featDim));
  const out = new Float32Array(grid * grid * featDim);
  for (let c = 0; c < grid * grid; c++) {
    const s = stats[c];
    const coeff = [1.0, s.mean, s.std, s.gx, s.gy];
    for (let d = 0; d < featDim; d++) {
      let v = 0;
      for (let r = 0; r < N_STATS; r++) v += coeff[r] * rows[r][d];
      out[c * featDim + d] = Math.tanh(v);
    }
  }
  return out;
}

/** Foreground weight per cell: mask coverage, or brightness saliency
 * stretched to [0, 1] when the image has no annotation. */
function fgWeights(stats: CellStats[], masked: boolean): number[] {
  if (masked) return stats.map((s) => s.fg);
  const means = stats.map((s) => s.mean);
  const lo = Math.min(...means);
  const hi = Math.max(...means);
  if (hi - lo < 1e-9) return means.map(() => 0);
  return means.map((m) => (m - lo) / (hi - lo));
}

const CLIP_NOISE = 0.08;

function clipMap(
  stats: CellStats[],
  grid: number,
  classVec: Float32Array,
  masked: boolean,
): Float32Array {
  const dim = classVec.length;
  const bg = hashVector("clip:background", dim);
  let bgNorm = 0;
  for (const x of bg) bgNorm += x * x;
  bgNorm = Math.sqrt(bgNorm);
  const weights = fgWeights(stats, masked);
  const out = new Float32Array(grid * grid * dim);
  for (let c = 0; c < grid * grid; c++) {
    const w = weights[c];
    const tone = Math.round(stats[c].mean * 255);
    const noise = hashVector(`clip:cell:${c}:${tone}`, dim);
    let norm = 0;
    const cell = new Float64Array(dim);
    for (let d = 0; d < dim; d++) {
      cell[d] = w * classVec[d] + (1 - w) * (bg[d] / bgNorm) + CLIP_NOISE * noise[d];
      norm += cell[d] * cell[d];
    }
    norm = Math.sqrt(norm) || 1;
    for (let d = 0; d < dim; d++) out[c * dim + d] = cell[d] / norm;
  }
  return out;
}

/**
 * Build the full stack for one image. `mask` (row-major 0/1, image-sized)
 * steers only the text-aligned map; pass null for unannotated images.
 */
export function buildStack(
  img: GrayImage,
  mask: Uint8Array | null,
  classVec: Float32Array,
  opts: StackOptions,
): FeatureStack {
  validateOptions(opts);
  if (mask && mask.length !== img.width * img.height) {
    throw new Error(`mask has ${mask.length} pixels, image is ${img.width}x${img.height}`);
  }
  const stages: Float32Array[][] = [];
  for (let s = 0; s < opts.grids.length; s++) {
    const grid = opts.grids[s];
    const stats = gridStats(img, mask, grid);
    const layers: Float32Array[] = [];
    for (let l = 0; l < opts.layersPerStage[s]; l++) {
      layers.push(levelFeatures(stats, grid, opts.featDim, `feat:S${s}:L${l}`));
    }
    stages.push(layers);
  }
  const clipGrid = opts.grids[0];
  const clip = clipMap(gridStats(img, mask, clipGrid), clipGrid, classVec, mask !== null);
  return { stages, clip, clipGrid, height: img.height, width: img.width };
}
