/**
 * Bundled example model: a fixed-weight multilayer perceptron over 8x8
 * RGB images (192 inputs, 16 hidden units, 4 classes).
 *
 * Weights file layout: 3156 little-endian float32 values, flat:
 *   W1 (16x192, row-major), b1 (16), W2 (4x16, row-major), b2 (4).
 * Total 12624 bytes. Accumulation happens in float64 in input order, so
 * the forward pass is bit-reproducible anywhere IEEE doubles are.
 */

import { readFileSync } from "node:fs";

export const INPUT_SIDE = 8;
export const INPUT_LEN = INPUT_SIDE * INPUT_SIDE * 3;
export const HIDDEN = 16;
export const CLASSES = 4;
export const WEIGHT_COUNT = HIDDEN * INPUT_LEN + HIDDEN + CLASSES * HIDDEN + CLASSES;

export interface Model {
  numClasses: number;
  forward(pixels: Float32Array, h: number, w: number): number[];
}

export class ModelLoadError extends Error {}

export function loadExampleMlp(path: string): Model {
  let buf: Buffer;
  try {
    buf = readFileSync(path);
  } catch (err) {
    throw new ModelLoadError(`cannot read weights ${path}: ${(err as Error).message}`);
  }
  if (buf.length !== WEIGHT_COUNT * 4) {
    throw new ModelLoadError(
      `weights ${path}: expected ${WEIGHT_COUNT * 4} bytes, got ${buf.length}`
    );
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const values = new Float64Array(WEIGHT_COUNT);
  for (let i = 0; i < WEIGHT_COUNT; i++) {
    values[i] = view.getFloat32(i * 4, true);
  }
  let at = 0;
  const w1 = values.subarray(at, (at += HIDDEN * INPUT_LEN));
  const b1 = values.subarray(at, (at += HIDDEN));
  const w2 = values.subarray(at, (at += CLASSES * HIDDEN));
  const b2 = values.subarray(at, (at += CLASSES));

  return {
    numClasses: CLASSES,
    forward(pixels: Float32Array, h: number, w: number): number[] {
      if (h !== INPUT_SIDE || w !== INPUT_SIDE || pixels.length !== INPUT_LEN) {
        throw new Error(
          `example mlp wants ${INPUT_SIDE}x${INPUT_SIDE}x3, got ${h}x${w} (${pixels.length} floats)`
        );
      }
      const hidden = new Float64Array(HIDDEN);
      for (let i = 0; i < HIDDEN; i++) {
        let acc = b1[i];
        const row = i * INPUT_LEN;
        for (let j = 0; j < INPUT_LEN; j++) {
          acc += w1[row + j] * pixels[j];
        }
        hidden[i] = acc > 0 ? acc : 0;
      }
      const scores = new Array<number>(CLASSES);
      for (let k = 0; k < CLASSES; k++) {
        let acc = b2[k];
        const row = k * HIDDEN;
        for (let i = 0; i < HIDDEN; i++) {
          acc += w2[row + i] * hidden[i];
        }
        scores[k] = acc;
      }
      return scores;
    },
  };
}

/** Lowest index wins ties, matching the harness's argmax rule. */
export function argmax(scores: number[]): number {
  let best = 0;
  for (let i = 1; i < scores.length; i++) {
    if (scores[i] > scores[best]) {
      best = i;
    }
  }
  return best;
}
