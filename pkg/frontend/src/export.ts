/**
 * Manifest-driven episode export. A manifest is a JSONL file (one episode
 * per line, '#' comments allowed); every referenced image/mask path is
 * resolved relative to the manifest. Output records follow the exact
 * layout the pipeline's loader validates, and the exporter does none of
 * the pipeline's math — it only extracts and serializes.
 */
import { mkdirSync, readFileSync } from "node:fs";
import { basename, dirname, join, resolve } from "node:path";

import { DEFAULT_TEMPLATES, embedClass } from "./embed.js";
import { buildStack, FeatureStack, StackOptions } from "./features.js";
import { readPgm, toBinaryMask } from "./pgm.js";
import { f32, Rec, u8, writeRecords } from "./pgme.js";

export interface SupportRef {
  image: string;
  mask: string;
  /** Degrade the mask to its filled bounding box before export. */
  boxOnly?: boolean;
}

export interface ManifestEntry {
  episode: string;
  className: string;
  classId: number;
  query: { image: string; mask?: string };
  supports: SupportRef[];
  fold?: number;
}

export interface ExportOptions extends StackOptions {
  templates: string[];
}

export const DEFAULT_EXPORT_OPTIONS: ExportOptions = {
  grids: [8, 16],
  layersPerStage: [2, 2],
  featDim: 32,
  textDim: 16,
  templates: DEFAULT_TEMPLATES,
};

function asString(entry: Record<string, unknown>, key: string, where: string): string {
  const v = entry[key];
  if (typeof v !== "string" || v.length === 0) {
    throw new Error(`${where}: field ${JSON.stringify(key)} must be a nonempty string`);
  }
  return v;
}

export function parseManifest(text: string): ManifestEntry[] {
  const entries: ManifestEntry[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) continue;
    const where = `manifest line ${i + 1}`;
    let raw: Record<string, unknown>;
    try {
      raw = JSON.parse(line);
    } catch (e) {
      throw new Error(`${where}: not valid JSON (${(e as Error).message})`);
    }
    const episode = asString(raw, "episode", where);
    const className = asString(raw, "className", where);
    if (typeof raw.classId !== "number" || !Number.isInteger(raw.classId) || raw.classId < 0) {
      throw new Error(`${where}: classId must be a non-negative integer`);
    }
    const query = raw.query as Record<string, unknown> | undefined;
    if (!query || typeof query !== "object") {
      throw new Error(`${where}: missing query object`);
    }
    const supports = Array.isArray(raw.supports) ? raw.supports : [];
    entries.push({
      episode,
      className,
      classId: raw.classId,
      query: {
        image: asString(query, "image", where),
        mask: typeof query.mask === "string" ? query.mask : undefined,
      },
      supports: supports.map((s: Record<string, unknown>, k: number) => ({
        image: asString(s, "image", `${where} support ${k}`),
        mask: asString(s, "mask", `${where} support ${k}`),
        boxOnly: s.boxOnly === true,
      })),
      fold: typeof raw.fold === "number" ? raw.fold : undefined,
    });
  }
  return entries;
}

/** Tight axis-aligned bounding box of the mask, filled with ones. */
export function bboxFill(mask: Uint8Array, height: number, width: number): Uint8Array {
  let y0 = height;
  let y1 = -1;
  let x0 = width;
  let x1 = -1;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[y * width + x]) {
        if (y < y0) y0 = y;
        if (y > y1) y1 = y;
        if (x < x0) x0 = x;
        if (x > x1) x1 = x;
      }
    }
  }
  if (y1 < 0) throw new Error("cannot fit a bounding box to an empty mask");
  const out = new Uint8Array(height * width);
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) out[y * width + x] = 1;
  }
  return out;
}

function loadMask(path: string, width: number, height: number, what: string): Uint8Array {
  const img = readPgm(path);
  if (img.width !== width || img.height !== height) {
    throw new Error(
      `${what}: mask ${basename(path)} is ${img.width}x${img.height}, ` +
        `image is ${width}x${height}`,
    );
  }
  return toBinaryMask(img);
}

function stackRecords(prefix: string, stack: FeatureStack, opts: StackOptions,
                      records: Map<string, Rec>): void {
  for (let s = 0; s < stack.stages.length; s++) {
    const grid = opts.grids[s];
    for (let l = 0; l < stack.stages[s].length; l++) {
      records.set(`${prefix}.feat.S${s}.L${l}`, f32([grid, grid, opts.featDim], stack.stages[s][l]));
    }
  }
  records.set(`${prefix}.clip`, f32([stack.clipGrid, stack.clipGrid, opts.textDim], stack.clip));
}

/** Build the full record map for one manifest entry. Paths in the entry
 * are resolved against `baseDir`. */
export function exportEpisode(
  entry: ManifestEntry,
  baseDir: string,
  opts: ExportOptions = DEFAULT_EXPORT_OPTIONS,
): Map<string, Rec> {
  validateEntryShape(entry);
  const textEmbed = embedClass(entry.className, opts.textDim, opts.templates);
  const records = new Map<string, Rec>();

  const qImg = readPgm(resolve(baseDir, entry.query.image));
  const qMask = entry.query.mask
    ? loadMask(resolve(baseDir, entry.query.mask), qImg.width, qImg.height,
               `episode ${entry.episode} query`)
    : null;
  stackRecords("query", buildStack(qImg, qMask, textEmbed, opts), opts, records);
  if (qMask) records.set("query.mask", u8([qImg.height, qImg.width], qMask));
  records.set("text.embed", f32([opts.textDim], textEmbed));

  for (let k = 0; k < entry.supports.length; k++) {
    const ref = entry.supports[k];
    const img = readPgm(resolve(baseDir, ref.image));
    let mask = loadMask(resolve(baseDir, ref.mask), img.width, img.height,
                        `episode ${entry.episode} support ${k}`);
    if (!mask.some((v) => v)) {
      throw new Error(`episode ${entry.episode} support ${k}: mask is empty`);
    }
    if (ref.boxOnly) mask = bboxFill(mask, img.height, img.width);
    stackRecords(`support${k}`, buildStack(img, mask, textEmbed, opts), opts, records);
    records.set(`support${k}.mask`, u8([img.height, img.width], mask));
  }

  records.set("meta.class_id", f32([1], [entry.classId]));
  records.set("meta.image_size", f32([2], [qImg.height, qImg.width]));
  return records;
}

function validateEntryShape(entry: ManifestEntry): void {
  if (!/^[\w.-]+$/.test(entry.episode)) {
    throw new Error(`episode name ${JSON.stringify(entry.episode)} is not filename-safe`);
  }
}

/** Export every manifest entry to `outDir/<episode>.pgme`; returns paths. */
export function exportBatch(
  manifestPath: string,
  outDir: string,
  opts: ExportOptions = DEFAULT_EXPORT_OPTIONS,
): string[] {
  const entries = parseManifest(readFileSync(manifestPath, "utf-8"));
  if (entries.length === 0) throw new Error(`no entries in ${manifestPath}`);
  mkdirSync(outDir, { recursive: true });
  const baseDir = dirname(manifestPath);
  const written: string[] = [];
  for (const entry of entries) {
    const records = exportEpisode(entry, baseDir, opts);
    const path = join(outDir, `${entry.episode}.pgme`);
    writeRecords(path, records);
    written.push(path);
  }
  return written;
}
