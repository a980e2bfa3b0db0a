export { BACKBONES, BackboneSpec, buildBackbone, getSpec, stageShapes, StageShape } from "./backbone.js";
export { DatasetError, scanClasses, scanTest, scanTrain } from "./dataset.js";
export { exportDataset, ExportConfig, ExportResult } from "./export.js";
export { makeFixture, FIXTURE_CLASSES } from "./fixture.js";
export { hgf1Buffer, writeHgf1, Hgf1Payload, LevelBlock, MaskBlock } from "./hgf1.js";
export { decodePpm, encodePpm, resizeNearest, toGray, PpmError, RawImage } from "./ppm.js";
export { mulberry32, normals } from "./prng.js";
