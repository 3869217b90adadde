// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/classifier.hpp"
#include "glyphdiff/condition.hpp"
#include "glyphdiff/dataset.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/digest.hpp"
#include "glyphdiff/errors.hpp"
#include "glyphdiff/evaluator.hpp"
#include "glyphdiff/font.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/lora.hpp"
#include "glyphdiff/manifest.hpp"
#include "glyphdiff/nn.hpp"
#include "glyphdiff/optim.hpp"
#include "glyphdiff/png_io.hpp"
#include "glyphdiff/random.hpp"
#include "glyphdiff/raster.hpp"
#include "glyphdiff/sampler.hpp"
#include "glyphdiff/schedule.hpp"
#include "glyphdiff/tensor.hpp"
#include "glyphdiff/trainer.hpp"
#include "glyphdiff/unet.hpp"
#include "glyphdiff/version.hpp"
