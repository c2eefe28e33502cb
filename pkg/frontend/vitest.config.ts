import { defineConfig } from "vitest/config";

export default defineConfig({
  resolve: {
    // source files import each other with .js suffixes so the tsc output
    // runs unbundled in the browser; map those back to the .ts sources
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
