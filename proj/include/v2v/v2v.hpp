#pragma once

#include "v2v/checks.hpp"
#include "v2v/config.hpp"
#include "v2v/conv.hpp"
#include "v2v/dataset.hpp"
#include "v2v/gradcheck.hpp"
#include "v2v/graph.hpp"
#include "v2v/layers.hpp"
#include "v2v/losses.hpp"
#include "v2v/reference.hpp"
#include "v2v/synth.hpp"
#include "v2v/teacher_flow.hpp"
#include "v2v/tensor.hpp"
#include "v2v/tensor_io.hpp"
#include "v2v/trainer.hpp"
#include "v2v/viz.hpp"
