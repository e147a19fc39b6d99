/**
 * Exporter command line.
 *
 *   node dist/cli.js export --manifest data/manifest.jsonl --out out/
 *   node dist/cli.js embed --classes dog,cat --dim 16
 *   node dist/cli.js fixtures --out fixtures
 *
 * `fixtures` draws a small set of demo images, writes their manifest, and
 * exports them — the committed episode files come from this command.
 */
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";

import { cosine, DEFAULT_TEMPLATES, embedClass, hashVector } from "./embed.js";
import { DEFAULT_EXPORT_OPTIONS, exportBatch, ExportOptions } from "./export.js";
import { GrayImage, writePgm } from "./pgm.js";

function parseIntList(text: string, flag: string): number[] {
  const parts = text.split(",").map((p) => Number(p.trim()));
  if (parts.length === 0 || parts.some((p) => !Number.isInteger(p) || p <= 0)) {
    throw new Error(`${flag}: expected comma-separated positive integers, got ${text}`);
  }
  return parts;
}

function cmdExport(args: string[]): number {
  const { values } = parseArgs({
    args,
    options: {
      manifest: { type: "string" },
      out: { type: "string" },
      grids: { type: "string", default: "8,16" },
      layers: { type: "string", default: "2,2" },
      "feat-dim": { type: "string", default: "32" },
      "text-dim": { type: "string", default: "16" },
    },
  });
  if (!values.manifest || !values.out) {
    console.error("export requires --manifest and --out");
    return 2;
  }
  const opts: ExportOptions = {
    grids: parseIntList(values.grids!, "--grids"),
    layersPerStage: parseIntList(values.layers!, "--layers"),
    featDim: Number(values["feat-dim"]),
    textDim: Number(values["text-dim"]),
    templates: DEFAULT_TEMPLATES,
  };
  const written = exportBatch(values.manifest, values.out, opts);
  for (const path of written) console.log(`wrote ${path}`);
  console.log(`exported ${written.length} episode(s)`);
  return 0;
}

function cmdEmbed(args: string[]): number {
  const { values } = parseArgs({
    args,
    options: {
      classes: { type: "string" },
      dim: { type: "string", default: "16" },
    },
  });
  if (!values.classes) {
    console.error("embed requires --classes (comma-separated names)");
    return 2;
  }
  const dim = Number(values.dim);
  const out: Record<string, number[]> = {};
  for (const name of values.classes.split(",").map((c) => c.trim()).filter(Boolean)) {
    out[name] = Array.from(embedClass(name, dim));
  }
  console.log(JSON.stringify(out, null, 1));
  return 0;
}

// ---------------------------------------------------------------------------
// demo image drawing (fixtures command)
// ---------------------------------------------------------------------------

type Blob =
  | { kind: "disc"; cy: number; cx: number; r: number }
  | { kind: "diamond"; cy: number; cx: number; r: number }
  | { kind: "bar"; cy: number; cx: number; r: number };

function inBlob(b: Blob, y: number, x: number): boolean {
  const dy = y - b.cy;
  const dx = x - b.cx;
  switch (b.kind) {
    case "disc":
      return dy * dy + dx * dx < b.r * b.r;
    case "diamond":
      return Math.abs(dy) + Math.abs(dx) < b.r * 1.3;
    case "bar":
      return Math.abs(dx) < b.r * 1.8 && Math.abs(dy) < b.r * 0.55;
  }
}

function drawScene(name: string, height: number, width: number,
                   blobs: Blob[]): { img: GrayImage; mask: GrayImage } {
  const grain = hashVector(`scene:${name}`, height * width);
  const img = new Uint8Array(height * width);
  const mask = new Uint8Array(height * width);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      const fg = blobs.some((b) => inBlob(b, y, x));
      let v = fg
        ? 175 + 15 * Math.sin((x + 2 * y) / 3) + 14 * grain[i]
        : 70 + 16 * grain[i];
      v = Math.max(0, Math.min(255, Math.round(v)));
      img[i] = v;
      mask[i] = fg ? 255 : 0;
    }
  }
  return {
    img: { width, height, data: img },
    mask: { width, height, data: mask },
  };
}

interface Scene {
  name: string;
  height: number;
  width: number;
  blobs: Blob[];
}

const SCENES: Scene[] = [
  { name: "dog_q", height: 48, width: 48,
    blobs: [{ kind: "disc", cy: 26, cx: 24, r: 11 }, { kind: "disc", cy: 12, cx: 14, r: 5 }] },
  { name: "dog_s0", height: 48, width: 48, blobs: [{ kind: "disc", cy: 20, cx: 20, r: 12 }] },
  { name: "dog_s1", height: 48, width: 48, blobs: [{ kind: "disc", cy: 18, cx: 30, r: 9 }] },
  { name: "cat_q", height: 40, width: 40, blobs: [{ kind: "diamond", cy: 20, cx: 22, r: 10 }] },
  { name: "cat_s0", height: 40, width: 40, blobs: [{ kind: "diamond", cy: 24, cx: 16, r: 11 }] },
  { name: "plane_q", height: 36, width: 48, blobs: [{ kind: "bar", cy: 18, cx: 24, r: 10 }] },
];

const MANIFEST_LINES = [
  "# demo episodes: one 2-shot, one box-annotated 1-shot, one text-only",
  JSON.stringify({
    episode: "dog_2shot", className: "dog", classId: 3,
    query: { image: "img/dog_q.pgm", mask: "img/dog_q_mask.pgm" },
    supports: [
      { image: "img/dog_s0.pgm", mask: "img/dog_s0_mask.pgm" },
      { image: "img/dog_s1.pgm", mask: "img/dog_s1_mask.pgm" },
    ],
  }),
  JSON.stringify({
    episode: "cat_box", className: "cat", classId: 5,
    query: { image: "img/cat_q.pgm", mask: "img/cat_q_mask.pgm" },
    supports: [{ image: "img/cat_s0.pgm", mask: "img/cat_s0_mask.pgm", boxOnly: true }],
  }),
  JSON.stringify({
    episode: "airplane_text_only", className: "airplane", classId: 11,
    query: { image: "img/plane_q.pgm", mask: "img/plane_q_mask.pgm" },
    supports: [],
  }),
];

function cmdFixtures(args: string[]): number {
  const { values } = parseArgs({
    args,
    options: { out: { type: "string", default: "fixtures" } },
  });
  const root = values.out!;
  mkdirSync(join(root, "img"), { recursive: true });
  for (const scene of SCENES) {
    const { img, mask } = drawScene(scene.name, scene.height, scene.width, scene.blobs);
    writePgm(join(root, "img", `${scene.name}.pgm`), img);
    writePgm(join(root, "img", `${scene.name}_mask.pgm`), mask);
    console.log(`drew ${scene.name} (${scene.width}x${scene.height})`);
  }
  const manifestPath = join(root, "manifest.jsonl");
  writeFileSync(manifestPath, MANIFEST_LINES.join("\n") + "\n");

  const written = exportBatch(manifestPath, join(root, "episodes"), DEFAULT_EXPORT_OPTIONS);
  for (const path of written) console.log(`wrote ${path}`);

  // record the measured embedding geometry so tests pin actual behavior
  const dim = DEFAULT_EXPORT_OPTIONS.textDim;
  const pairs: Record<string, number> = {};
  for (const [a, b] of [["dog", "cat"], ["dog", "airplane"]]) {
    pairs[`${a}|${b}`] = cosine(embedClass(a, dim), embedClass(b, dim));
  }
  const embedFixture = {
    dim,
    templateCount: DEFAULT_TEMPLATES.length,
    cosines: pairs,
  };
  writeFileSync(join(root, "embeddings.json"), JSON.stringify(embedFixture, null, 1) + "\n");
  console.log(`recorded embedding cosines: ${JSON.stringify(pairs)}`);
  return 0;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  switch (command) {
    case "export":
      return cmdExport(rest);
    case "embed":
      return cmdEmbed(rest);
    case "fixtures":
      return cmdFixtures(rest);
    default:
      console.error("usage: cli.js <export|embed|fixtures> [options]");
      return 2;
  }
}

process.exit(main(process.argv.slice(2)));
