import * as http from "node:http";
import * as readline from "node:readline";

import type { Model } from "./mlp.js";
import { handleLine } from "./protocol.js";

/**
 * Serve requests from stdin, one JSON line each, strictly in order.
 * Malformed lines get an error response; the loop only ends at EOF.
 */
export async function serveStdio(
  model: Model,
  input: NodeJS.ReadableStream = process.stdin,
  output: NodeJS.WritableStream = process.stdout
): Promise<void> {
  const rl = readline.createInterface({ input, crlfDelay: Infinity });
  for await (const line of rl) {
    if (line.trim() === "") {
      continue;
    }
    output.write(handleLine(model, line));
  }
}

/** HTTP front end: POST /predict takes a request body, anything else is 404. */
export function createHttpServer(model: Model): http.Server {
  return http.createServer((req, res) => {
    if (req.method !== "POST" || req.url !== "/predict") {
      res.writeHead(404, { "Content-Type": "application/json" });
      res.end(JSON.stringify({ error: "not found" }) + "\n");
      return;
    }
    const chunks: Buffer[] = [];
    req.on("data", (chunk: Buffer) => chunks.push(chunk));
    req.on("end", () => {
      const body = Buffer.concat(chunks).toString("utf8");
      // Bad requests still get a 200 with an error payload so the client
      // can tell a protocol problem from a transport problem.
      res.writeHead(200, { "Content-Type": "application/json" });
      res.end(handleLine(model, body));
    });
    req.on("error", () => {
      res.destroy();
    });
  });
}

export function serveHttp(model: Model, port: number): Promise<http.Server> {
  const server = createHttpServer(model);
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, "127.0.0.1", () => {
      const addr = server.address();
      const bound = typeof addr === "object" && addr !== null ? addr.port : port;
      process.stderr.write(`listening on http://127.0.0.1:${bound}/predict\n`);
      resolve(server);
    });
  });
}
