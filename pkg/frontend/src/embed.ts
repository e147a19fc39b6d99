/**
 * Deterministic text embeddings with no model download: each class name maps
 * to a unit vector built from (a) a small attribute lexicon, so everyday
 * classes that share attributes (dog/cat: both furry pets) land closer
 * together than unrelated ones (dog/airplane), and (b) a hash of the word
 * itself, so unknown names still embed (open vocabulary) and distinct names
 * stay distinct. Prompt templates perturb the vector slightly; the exported
 * embedding is the unit-normalized mean over the template set.
 */

export const DEFAULT_TEMPLATES = [
  "a photo of a {}",
  "a bad photo of a {}",
  "a photo of one {}",
  "a cropped photo of a {}",
  "a bright photo of a {}",
  "a close-up photo of a {}",
  "a drawing of a {}",
];

/** Attribute tags for common segmentation-benchmark classes. Coverage is
 * best-effort; anything missing falls back to the name hash alone. */
const LEXICON: Record<string, string[]> = {
  dog: ["animal", "mammal", "pet", "furry", "land"],
  cat: ["animal", "mammal", "pet", "furry", "land"],
  horse: ["animal", "mammal", "large", "land"],
  cow: ["animal", "mammal", "large", "land"],
  sheep: ["animal", "mammal", "furry", "land"],
  bird: ["animal", "flying", "small", "feathered"],
  person: ["human", "land"],
  airplane: ["vehicle", "flying", "metal", "large", "machine"],
  aeroplane: ["vehicle", "flying", "metal", "large", "machine"],
  car: ["vehicle", "road", "metal", "machine"],
  bus: ["vehicle", "road", "metal", "large", "machine"],
  train: ["vehicle", "rail", "metal", "large", "machine"],
  bicycle: ["vehicle", "road", "metal", "small"],
  motorbike: ["vehicle", "road", "metal", "machine"],
  boat: ["vehicle", "water", "large"],
  bottle: ["object", "container", "small", "indoor"],
  chair: ["object", "furniture", "indoor"],
  sofa: ["object", "furniture", "indoor", "large"],
  table: ["object", "furniture", "indoor"],
  plant: ["vegetation", "small", "indoor"],
  tree: ["vegetation", "large", "outdoor"],
  monitor: ["object", "machine", "indoor", "screen"],
  television: ["object", "machine", "indoor", "screen"],
};

/** FNV-1a, 32-bit. */
function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32 PRNG: tiny, fast, and identical on every JS engine. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Deterministic pseudo-gaussian vector for an arbitrary token. */
export function hashVector(token: string, dim: number): Float64Array {
  const rand = mulberry32(fnv1a(token));
  const out = new Float64Array(dim);
  for (let i = 0; i < dim; i++) {
    // Box-Muller; cos branch only, fresh pair each draw
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    out[i] = Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }
  return out;
}

function unit(v: Float64Array): Float64Array {
  let n = 0;
  for (const x of v) n += x * x;
  n = Math.sqrt(n);
  if (n === 0) throw new Error("cannot normalize a zero vector");
  return v.map((x) => x / n) as Float64Array;
}

function addScaled(acc: Float64Array, v: Float64Array, scale: number): void {
  for (let i = 0; i < acc.length; i++) acc[i] += scale * v[i];
}

function wordVector(word: string, dim: number): Float64Array {
  const attrs = LEXICON[word];
  const acc = new Float64Array(dim);
  addScaled(acc, hashVector(`word:${word}`, dim), attrs ? 0.4 : 1.0);
  if (attrs) {
    for (const a of attrs) addScaled(acc, hashVector(`attr:${a}`, dim), 1.0 / attrs.length);
  }
  return unit(acc);
}

/** Embed a bare class name (no templates). Multi-word names average. */
export function classVector(name: string, dim: number): Float64Array {
  const words = name.toLowerCase().trim().split(/[\s_-]+/).filter(Boolean);
  if (words.length === 0) throw new Error(`empty class name ${JSON.stringify(name)}`);
  const acc = new Float64Array(dim);
  for (const w of words) addScaled(acc, wordVector(w, dim), 1.0 / words.length);
  return unit(acc);
}

const TEMPLATE_WEIGHT = 0.15;

/**
 * Per-class embedding: mean over prompt templates, unit-normalized.
 * Identical names always produce identical vectors.
 */
export function embedClass(name: string, dim: number, templates = DEFAULT_TEMPLATES): Float32Array {
  if (templates.length === 0) throw new Error("template set must be nonempty");
  const cls = classVector(name, dim);
  const acc = new Float64Array(dim);
  for (const t of templates) {
    const prompt = new Float64Array(cls);
    addScaled(prompt, hashVector(`tmpl:${t}`, dim), TEMPLATE_WEIGHT);
    addScaled(acc, unit(prompt), 1.0 / templates.length);
  }
  return Float32Array.from(unit(acc));
}

/** Batch form; the class list must be nonempty. */
export function embedClasses(
  names: string[],
  dim: number,
  templates = DEFAULT_TEMPLATES,
): Map<string, Float32Array> {
  if (names.length === 0) throw new Error("class list must be nonempty");
  const out = new Map<string, Float32Array>();
  for (const n of names) {
    if (!out.has(n)) out.set(n, embedClass(n, dim, templates));
  }
  return out;
}

export function cosine(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) throw new Error(`length mismatch ${a.length} vs ${b.length}`);
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}
