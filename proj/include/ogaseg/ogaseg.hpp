#pragma once

#include "ogaseg/attention.hpp"
#include "ogaseg/checkpoint.hpp"
#include "ogaseg/dataset.hpp"
#include "ogaseg/errors.hpp"
#include "ogaseg/evaluate.hpp"
#include "ogaseg/fusion.hpp"
#include "ogaseg/geometry.hpp"
#include "ogaseg/grad_check.hpp"
#include "ogaseg/grad_suite.hpp"
#include "ogaseg/kv_config.hpp"
#include "ogaseg/losses.hpp"
#include "ogaseg/metrics.hpp"
#include "ogaseg/network.hpp"
#include "ogaseg/ops.hpp"
#include "ogaseg/optimizer.hpp"
#include "ogaseg/palette.hpp"
#include "ogaseg/png_io.hpp"
#include "ogaseg/random.hpp"
#include "ogaseg/synth.hpp"
#include "ogaseg/tape.hpp"
#include "ogaseg/tensor.hpp"
#include "ogaseg/trainer.hpp"
