#pragma once

namespace s3f {

// Classic marching-cubes lookup tables (Lorensen & Cline / Bourke layout):
// per-case intersected-edge bitmask and triangle fans over edge indices.
extern const int kMcEdgeTable[256];
extern const int kMcTriTable[256][16];

}  // namespace s3f
