#pragma once

#include "dsp/convert.hpp"
#include "dsp/data/dataset.hpp"
#include "dsp/data/synth.hpp"
#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/metrics.hpp"
#include "dsp/nn/beam.hpp"
#include "dsp/nn/checkpoint.hpp"
#include "dsp/nn/gradcheck.hpp"
#include "dsp/nn/graph.hpp"
#include "dsp/nn/model.hpp"
#include "dsp/nn/train.hpp"
#include "dsp/random.hpp"
#include "dsp/session.hpp"
#include "dsp/text.hpp"
#include "dsp/tree.hpp"
