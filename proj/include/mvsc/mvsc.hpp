#pragma once

#include "mvsc/backbone.hpp"
#include "mvsc/config.hpp"
#include "mvsc/errors.hpp"
#include "mvsc/grad_check.hpp"
#include "mvsc/io.hpp"
#include "mvsc/metrics.hpp"
#include "mvsc/network.hpp"
#include "mvsc/pipeline.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/slice_select.hpp"
#include "mvsc/tensor.hpp"
#include "mvsc/text_embed.hpp"
#include "mvsc/train.hpp"
#include "mvsc/volume.hpp"
