#pragma once

#include "qpi/error.hpp"
#include "qpi/rng.hpp"
#include "qpi/image.hpp"
#include "qpi/blob.hpp"
#include "qpi/parallel.hpp"
#include "qpi/simulator.hpp"
#include "qpi/dataset.hpp"
#include "qpi/diffnet/tensor.hpp"
#include "qpi/diffnet/layers.hpp"
#include "qpi/diffnet/network.hpp"
#include "qpi/diffnet/adam.hpp"
#include "qpi/diffnet/checkpoint.hpp"
#include "qpi/diffnet/gradcheck.hpp"
#include "qpi/losses.hpp"
#include "qpi/models.hpp"
#include "qpi/training.hpp"
#include "qpi/deconv.hpp"
#include "qpi/evaluation.hpp"
#include "qpi/config.hpp"
