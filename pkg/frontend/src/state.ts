// Review-session state and the one client-side rule (score >= threshold).
// The UI never invents detection logic: everything below is a projection of
// the server's artifact JSON under that single rule.

import type { PredictionFile, RawDetection } from './api.js';

export const DEFECT_CLASSES = ['bridge', 'line_collapse', 'gap', 'microbridge', 'p_gap'] as const;
export const NO_DEFECT_FOLDER = 'no_defect';

export interface Detection {
  label: string;
  score: number;
  box: [number, number, number, number];
  source: string;
}

export interface ReviewSession {
  dataset: string | null;
  images: string[];
  cursor: number;
  threshold: number;
  artifact: string | null;
  hiddenClasses: Set<string>;
}

export function createSession(): ReviewSession {
  return {
    dataset: null,
    images: [],
    cursor: 0,
    threshold: 0.5,
    artifact: null,
    hiddenClasses: new Set(),
  };
}

/** The single shared filter rule: a detection is visible iff score >= t. */
export function visibleAt(detection: Detection, threshold: number): boolean {
  return detection.score >= threshold;
}

const clamp = (value: number, lo: number, hi: number) => Math.min(Math.max(value, lo), hi);

export function setThreshold(session: ReviewSession, value: number): void {
  session.threshold = clamp(Number.isFinite(value) ? value : 0.5, 0, 1);
}

export function setImages(session: ReviewSession, dataset: string, images: string[]): void {
  session.dataset = dataset;
  session.images = [...images];
  session.cursor = 0;
}

export function currentImage(session: ReviewSession): string | null {
  return session.images[session.cursor] ?? null;
}

/** Navigation is total: from any image the cursor stays inside the snapshot. */
export function nextImage(session: ReviewSession): void {
  if (session.images.length) {
    session.cursor = (session.cursor + 1) % session.images.length;
  }
}

export function prevImage(session: ReviewSession): void {
  if (session.images.length) {
    session.cursor = (session.cursor - 1 + session.images.length) % session.images.length;
  }
}

export function toggleClass(session: ReviewSession, label: string): void {
  if (session.hiddenClasses.has(label)) {
    session.hiddenClasses.delete(label);
  } else {
    session.hiddenClasses.add(label);
  }
}

/** Normalize the artifact JSON into per-image detection lists. */
export function flattenPredictions(file: PredictionFile): Map<string, Detection[]> {
  const byImage = new Map<string, Detection[]>();
  for (const entry of file.images) {
    const detections = entry.detections.map((d: RawDetection) => ({
      label: d.class,
      score: d.score,
      box: d.bbox,
      source: d.source ?? file.model,
    }));
    const existing = byImage.get(entry.image);
    if (existing) {
      existing.push(...detections);
    } else {
      byImage.set(entry.image, detections);
    }
  }
  return byImage;
}

export function filterDetections(
  detections: Detection[],
  threshold: number,
  hiddenClasses: Set<string> = new Set()
): Detection[] {
  return detections.filter((d) => visibleAt(d, threshold) && !hiddenClasses.has(d.label));
}

export interface SummaryCard {
  label: string;
  count: number;
  meanScore: number;
}

/** Per-class count and mean score at the current threshold, over all images. */
export function classSummaries(
  byImage: Map<string, Detection[]>,
  threshold: number
): SummaryCard[] {
  const totals = new Map<string, { count: number; scoreSum: number }>();
  for (const detections of byImage.values()) {
    for (const d of detections) {
      if (!visibleAt(d, threshold)) continue;
      const entry = totals.get(d.label) ?? { count: 0, scoreSum: 0 };
      entry.count += 1;
      entry.scoreSum += d.score;
      totals.set(d.label, entry);
    }
  }
  return [...totals.entries()]
    .map(([label, { count, scoreSum }]) => ({ label, count, meanScore: scoreSum / count }))
    .sort((a, b) => a.label.localeCompare(b.label));
}

/** Sum of card counts == number of CSV rows the server exports at the same t. */
export function totalVisible(byImage: Map<string, Detection[]>, threshold: number): number {
  let total = 0;
  for (const detections of byImage.values()) {
    total += detections.filter((d) => visibleAt(d, threshold)).length;
  }
  return total;
}

/**
 * Mirror of the server's segregation rule: an image lands in the folder of
 * every class with at least one visible detection; none puts it in no_defect.
 */
export function segregationCounts(
  byImage: Map<string, Detection[]>,
  threshold: number
): Record<string, number> {
  const counts: Record<string, number> = { [NO_DEFECT_FOLDER]: 0 };
  for (const label of DEFECT_CLASSES) counts[label] = 0;
  for (const detections of byImage.values()) {
    const classes = new Set(
      detections.filter((d) => visibleAt(d, threshold)).map((d) => d.label)
    );
    if (classes.size === 0) {
      counts[NO_DEFECT_FOLDER] = (counts[NO_DEFECT_FOLDER] ?? 0) + 1;
    } else {
      for (const label of classes) counts[label] = (counts[label] ?? 0) + 1;
    }
  }
  return counts;
}
