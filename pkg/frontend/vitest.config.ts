import { defineConfig } from 'vitest/config';

// Generous timeouts: the end-to-end suite renders a fixture dataset and runs
// a live service instance.
export default defineConfig({
  test: {
    environment: 'node',
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
