import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // Cross-component tests spawn the Python engine and run real (if tiny)
    // CNN inference; give them room.
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
