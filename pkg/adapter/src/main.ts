/**
 * Model adapter entry point.
 *
 * Wraps a classifier behind the line-oriented JSON protocol, either on
 * stdin/stdout or as an HTTP endpoint:
 *
 *   node dist/main.js --mode stdio --weights fixtures/example_mlp.bin
 *   node dist/main.js --mode http --port 8080 --weights fixtures/example_mlp.bin
 *   node dist/main.js --mode stdio --hook ./my-model.js --num-classes 10
 *
 * A hook module's default export is (pixels: Float32Array, h, w) => number[].
 */

import * as path from "node:path";
import { pathToFileURL } from "node:url";

import { loadExampleMlp, ModelLoadError, type Model } from "./mlp.js";
import { serveHttp, serveStdio } from "./server.js";

interface CliOptions {
  mode: "stdio" | "http";
  port: number;
  weights: string | null;
  hook: string | null;
  numClasses: number | null;
}

const USAGE =
  "usage: main.js --mode stdio|http [--port N] (--weights FILE | --hook MODULE --num-classes N)";

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n${USAGE}\n`);
  process.exit(2);
}

export function parseArgs(argv: string[]): CliOptions {
  const opts: CliOptions = { mode: "stdio", port: 8080, weights: null, hook: null, numClasses: null };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = (): string => {
      i++;
      if (i >= argv.length) {
        fail(`${arg} needs a value`);
      }
      return argv[i];
    };
    switch (arg) {
      case "--mode": {
        const mode = next();
        if (mode !== "stdio" && mode !== "http") {
          fail(`--mode must be stdio or http, got '${mode}'`);
        }
        opts.mode = mode;
        break;
      }
      case "--port": {
        const port = Number(next());
        if (!Number.isInteger(port) || port < 0 || port > 65535) {
          fail("--port must be an integer in [0, 65535]");
        }
        opts.port = port;
        break;
      }
      case "--weights":
        opts.weights = next();
        break;
      case "--hook":
        opts.hook = next();
        break;
      case "--num-classes": {
        const n = Number(next());
        if (!Number.isInteger(n) || n < 1) {
          fail("--num-classes must be a positive integer");
        }
        opts.numClasses = n;
        break;
      }
      default:
        fail(`unknown argument '${arg}'`);
    }
  }
  if (opts.weights !== null && opts.hook !== null) {
    fail("--weights and --hook are mutually exclusive");
  }
  if (opts.weights === null && opts.hook === null) {
    fail("one of --weights or --hook is required");
  }
  if (opts.hook !== null && opts.numClasses === null) {
    fail("--hook needs --num-classes");
  }
  return opts;
}

async function loadHook(modulePath: string, numClasses: number): Promise<Model> {
  const resolved = pathToFileURL(path.resolve(modulePath)).href;
  let mod: { default?: unknown };
  try {
    mod = await import(resolved);
  } catch (err) {
    throw new ModelLoadError(`cannot import hook '${modulePath}': ${(err as Error).message}`);
  }
  const fn = mod.default;
  if (typeof fn !== "function") {
    throw new ModelLoadError(`hook '${modulePath}' has no default export function`);
  }
  return {
    numClasses,
    forward(pixels: Float32Array, h: number, w: number): number[] {
      const scores = (fn as (p: Float32Array, h: number, w: number) => number[])(pixels, h, w);
      if (!Array.isArray(scores) || scores.length !== numClasses) {
        throw new Error(`hook returned ${Array.isArray(scores) ? scores.length : "no"} scores, expected ${numClasses}`);
      }
      return scores;
    },
  };
}

async function main(): Promise<void> {
  const opts = parseArgs(process.argv.slice(2));
  let model: Model;
  try {
    model = opts.weights !== null ? loadExampleMlp(opts.weights) : await loadHook(opts.hook as string, opts.numClasses as number);
  } catch (err) {
    if (err instanceof ModelLoadError) {
      process.stderr.write(`error: ${err.message}\n`);
      process.exit(1);
    }
    throw err;
  }
  if (opts.mode === "http") {
    await serveHttp(model, opts.port);
  } else {
    await serveStdio(model);
  }
}

const isDirectRun = process.argv[1] !== undefined &&
  pathToFileURL(path.resolve(process.argv[1])).href === import.meta.url;

if (isDirectRun) {
  main().catch((err) => {
    process.stderr.write(`fatal: ${(err as Error).stack ?? err}\n`);
    process.exit(1);
  });
}
