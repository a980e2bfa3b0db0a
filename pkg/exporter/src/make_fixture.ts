/** CLI wrapper: `node dist/make_fixture.js <dir> [seed]`. */

import { makeFixture } from "./fixture.js";

const dir = process.argv[2];
if (!dir) {
  console.error("usage: make_fixture <dir> [seed]");
  process.exit(2);
}
makeFixture(dir, process.argv[3] ? parseInt(process.argv[3], 10) : 0);
console.error(`fixture dataset written under ${dir}`);
