/**
 * Wire protocol shared with the harness: one JSON object per line.
 *
 * Request:  {"id": <u64>, "images": [{"h", "w", "data"}, ...]} where data
 * is base64 of little-endian float32 RGB, row-major, values in [0, 1].
 * Response: {"id": <echo>, "predictions": [{"label", "scores"}, ...]}
 * or {"id": <echo-or-null>, "error": "<message>"}.
 */

import { argmax, type Model } from "./mlp.js";

export interface ImagePayload {
  h: number;
  w: number;
  pixels: Float32Array;
}

export interface Request {
  id: number;
  images: ImagePayload[];
}

export class ProtocolError extends Error {
  requestId: number | null;

  constructor(message: string, requestId: number | null = null) {
    super(message);
    this.requestId = requestId;
  }
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

export function parseRequest(line: string): Request {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`request is not valid JSON: ${(err as Error).message}`);
  }
  if (!isRecord(raw)) {
    throw new ProtocolError("request must be a JSON object");
  }
  const id = raw.id;
  if (typeof id !== "number" || !Number.isInteger(id) || id < 0) {
    throw new ProtocolError("request id must be a non-negative integer");
  }
  if (!Array.isArray(raw.images) || raw.images.length === 0) {
    throw new ProtocolError("request needs a non-empty images array", id);
  }
  const images = raw.images.map((img, index) => {
    if (!isRecord(img)) {
      throw new ProtocolError(`images[${index}] must be an object`, id);
    }
    const { h, w, data } = img;
    if (!Number.isInteger(h) || !Number.isInteger(w) || (h as number) < 1 || (w as number) < 1) {
      throw new ProtocolError(`images[${index}]: h and w must be positive integers`, id);
    }
    if (typeof data !== "string") {
      throw new ProtocolError(`images[${index}]: data must be a base64 string`, id);
    }
    const bytes = Buffer.from(data, "base64");
    const expected = (h as number) * (w as number) * 3 * 4;
    if (bytes.length !== expected) {
      throw new ProtocolError(
        `images[${index}]: expected ${expected} bytes of pixel data, got ${bytes.length}`,
        id
      );
    }
    const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
    const pixels = new Float32Array(bytes.length / 4);
    for (let i = 0; i < pixels.length; i++) {
      pixels[i] = view.getFloat32(i * 4, true);
    }
    return { h: h as number, w: w as number, pixels };
  });
  return { id, images };
}

export function successLine(id: number, predictions: { label: number; scores: number[] }[]): string {
  return JSON.stringify({ id, predictions }) + "\n";
}

export function errorLine(id: number | null, message: string): string {
  return JSON.stringify({ id, error: message }) + "\n";
}

/** Run the model over one parsed request; model errors become protocol errors. */
export function respond(model: Model, request: Request): string {
  const predictions = request.images.map((img, index) => {
    let scores: number[];
    try {
      scores = model.forward(img.pixels, img.h, img.w);
    } catch (err) {
      throw new ProtocolError(`images[${index}]: ${(err as Error).message}`, request.id);
    }
    if (!Array.isArray(scores) || scores.length === 0 || scores.some((s) => typeof s !== "number")) {
      throw new ProtocolError(`model returned a bad score vector for images[${index}]`, request.id);
    }
    return { label: argmax(scores), scores };
  });
  return successLine(request.id, predictions);
}

/** One request line in, one response line out; never throws. */
export function handleLine(model: Model, line: string): string {
  try {
    return respond(model, parseRequest(line));
  } catch (err) {
    if (err instanceof ProtocolError) {
      return errorLine(err.requestId, err.message);
    }
    return errorLine(null, `internal error: ${(err as Error).message}`);
  }
}
