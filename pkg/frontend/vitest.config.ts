import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The end-to-end test boots the Python session server and plays a
    // full game through it, so give hooks and tests generous headroom.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
