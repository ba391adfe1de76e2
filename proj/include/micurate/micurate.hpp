#pragma once

#include "micurate/corruption.hpp"
#include "micurate/dataset.hpp"
#include "micurate/digamma.hpp"
#include "micurate/error.hpp"
#include "micurate/experiment.hpp"
#include "micurate/idx.hpp"
#include "micurate/ksg.hpp"
#include "micurate/logreg.hpp"
#include "micurate/neighbors.hpp"
#include "micurate/parallel.hpp"
#include "micurate/pca.hpp"
#include "micurate/random.hpp"
#include "micurate/selection.hpp"
