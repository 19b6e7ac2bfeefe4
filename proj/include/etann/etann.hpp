#pragma once

#include "etann/autodiff.hpp"
#include "etann/config.hpp"
#include "etann/datagen.hpp"
#include "etann/driver.hpp"
#include "etann/kernels.hpp"
#include "etann/lattice.hpp"
#include "etann/loss.hpp"
#include "etann/manifest.hpp"
#include "etann/materials.hpp"
#include "etann/mlp.hpp"
#include "etann/models.hpp"
#include "etann/normalize.hpp"
#include "etann/ode.hpp"
#include "etann/optimizer.hpp"
#include "etann/record.hpp"
#include "etann/symtensor.hpp"
#include "etann/train.hpp"
