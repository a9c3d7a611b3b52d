#pragma once

#include "mcl/errors.hpp"
#include "mcl/tensor.hpp"
#include "mcl/layers.hpp"
#include "mcl/optim.hpp"
#include "mcl/gradcheck.hpp"
#include "mcl/geometry.hpp"
#include "mcl/loss.hpp"
#include "mcl/network.hpp"
#include "mcl/model_io.hpp"
#include "mcl/image.hpp"
#include "mcl/dataset.hpp"
#include "mcl/augment.hpp"
#include "mcl/synth.hpp"
#include "mcl/eval.hpp"
#include "mcl/training.hpp"
#include "mcl/config.hpp"
