/** Inline SVG builders. Inputs are the server's numbers; this file only
 * maps them to pixels. */

const W = 420;
const H = 120;
const PAD = 26;

function scale(values: number[], lo: number, hi: number, pixLo: number, pixHi: number): number[] {
  const span = hi - lo || 1;
  return values.map((v) => pixLo + ((v - lo) / span) * (pixHi - pixLo));
}

/** Belief mean per step as a line with a +-1 std band (first dimension). */
export function beliefBandSvg(means: number[], stds: number[]): string {
  if (means.length === 0) return `<svg width="${W}" height="${H}"></svg>`;
  const upper = means.map((m, i) => m + (stds[i] ?? 0));
  const lower = means.map((m, i) => m - (stds[i] ?? 0));
  const lo = Math.min(...lower);
  const hi = Math.max(...upper);
  const xs = scale(means.map((_, i) => i), 0, Math.max(means.length - 1, 1), PAD, W - PAD);
  const yOf = (vals: number[]) => scale(vals, lo, hi, H - PAD, PAD);
  const yMean = yOf(means);
  const yUp = yOf(upper);
  const yLow = yOf(lower);
  const pt = (x: number | undefined, y: number | undefined) =>
    `${(x ?? 0).toFixed(1)},${(y ?? 0).toFixed(1)}`;
  const band =
    xs.map((x, i) => pt(x, yUp[i])).join(" ") +
    " " +
    [...xs].reverse().map((x, i) => pt(x, yLow[xs.length - 1 - i])).join(" ");
  const line = xs.map((x, i) => pt(x, yMean[i])).join(" ");
  const dots = xs
    .map((x, i) => `<circle cx="${(x ?? 0).toFixed(1)}" cy="${(yMean[i] ?? 0).toFixed(1)}" r="3" class="dot"/>`)
    .join("");
  return (
    `<svg width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" role="img" aria-label="belief mean and band">` +
    `<polygon points="${band}" class="band"/>` +
    `<polyline points="${line}" class="line" fill="none"/>` +
    dots +
    `</svg>`
  );
}

/** Incremental EIG estimate per step as bars. */
export function eigBarsSvg(values: number[]): string {
  if (values.length === 0) return `<svg width="${W}" height="${H}"></svg>`;
  const hi = Math.max(...values, 1e-12);
  const barW = Math.min(40, (W - 2 * PAD) / values.length - 6);
  const bars = values
    .map((v, i) => {
      const x = PAD + (i * (W - 2 * PAD)) / values.length;
      const h = Math.max(1, (v / hi) * (H - 2 * PAD));
      return `<rect x="${x.toFixed(1)}" y="${(H - PAD - h).toFixed(1)}" width="${barW.toFixed(1)}" height="${h.toFixed(1)}" class="bar"><title>step ${i + 1}: ${v.toFixed(4)}</title></rect>`;
    })
    .join("");
  return `<svg width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" role="img" aria-label="incremental EIG per step">${bars}</svg>`;
}
