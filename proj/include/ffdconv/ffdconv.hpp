#pragma once

// Umbrella header.

#include "ffdconv/audio.hpp"
#include "ffdconv/autograd.hpp"
#include "ffdconv/conv.hpp"
#include "ffdconv/ddf.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/filter_gen.hpp"
#include "ffdconv/gradcheck.hpp"
#include "ffdconv/blocks.hpp"
#include "ffdconv/gru.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/metrics.hpp"
#include "ffdconv/model.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/parallel.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/synth.hpp"
#include "ffdconv/tensor.hpp"
#include "ffdconv/train.hpp"
