import { spawn, spawnSync } from "node:child_process";
import { existsSync } from "node:fs";
import { resolve } from "node:path";

const PORT = 8971;
const ROOT = resolve(__dirname, "..");
const FIXTURES = resolve(ROOT, ".e2e");

async function waitForService(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(url);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`service did not come up at ${url}`);
}

export default async function setup(): Promise<() => void> {
  if (!existsSync(resolve(FIXTURES, "manifest.json"))) {
    const build = spawnSync(
      "python3",
      [resolve(ROOT, "e2e", "build_fixtures.py"), FIXTURES],
      { stdio: "inherit" },
    );
    if (build.status !== 0) {
      throw new Error("fixture build failed");
    }
  }
  const service = spawn(
    "python3",
    [
      "-m",
      "convsearch.cli",
      "serve",
      "--corpus",
      resolve(FIXTURES, "corpus"),
      "--model",
      resolve(FIXTURES, "model.bin"),
      "--m",
      "2",
      "--iterations",
      "5",
      "--port",
      String(PORT),
    ],
    { stdio: "ignore" },
  );
  await waitForService(`http://127.0.0.1:${PORT}/openapi.json`, 30_000);
  process.env.CONVSEARCH_URL = `http://127.0.0.1:${PORT}`;
  return () => {
    service.kill("SIGTERM");
  };
}
