// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace glyphdiff {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace glyphdiff
