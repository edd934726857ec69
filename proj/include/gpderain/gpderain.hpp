#pragma once

#include "gpderain/autodiff.hpp"
#include "gpderain/checkpoint.hpp"
#include "gpderain/config.hpp"
#include "gpderain/dataset_io.hpp"
#include "gpderain/error.hpp"
#include "gpderain/gp.hpp"
#include "gpderain/image.hpp"
#include "gpderain/latent_store_io.hpp"
#include "gpderain/losses.hpp"
#include "gpderain/metrics.hpp"
#include "gpderain/model.hpp"
#include "gpderain/optim.hpp"
#include "gpderain/rain.hpp"
#include "gpderain/rng.hpp"
#include "gpderain/tensor.hpp"
#include "gpderain/trainer.hpp"
