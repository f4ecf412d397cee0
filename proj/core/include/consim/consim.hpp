#pragma once

#include "consim/attribute.hpp"
#include "consim/bundle.hpp"
#include "consim/error.hpp"
#include "consim/explain.hpp"
#include "consim/factorize.hpp"
#include "consim/layerwise.hpp"
#include "consim/manifest.hpp"
#include "consim/npy.hpp"
#include "consim/pipeline.hpp"
#include "consim/regress.hpp"
#include "consim/replace.hpp"
#include "consim/similarity.hpp"
#include "consim/synthgen.hpp"
#include "consim/types.hpp"
#include "consim/zip.hpp"
