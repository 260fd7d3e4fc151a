import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // the console-loop test drives a real server process
    fileParallelism: false,
    testTimeout: 20_000,
  },
});
