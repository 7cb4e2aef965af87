#pragma once

#include "minstab/error.hpp"
#include "minstab/matrix.hpp"
#include "minstab/linalg.hpp"
#include "minstab/network.hpp"
#include "minstab/serialize.hpp"
#include "minstab/dataset.hpp"
#include "minstab/minnorm.hpp"
#include "minstab/spectral.hpp"
#include "minstab/stability.hpp"
#include "minstab/experiments.hpp"
