#pragma once

#include "utd/error.hpp"
#include "utd/hashing.hpp"
#include "utd/json_io.hpp"
#include "utd/corpus.hpp"
#include "utd/prompts.hpp"
#include "utd/endpoint.hpp"
#include "utd/parallel.hpp"
#include "utd/response_cache.hpp"
#include "utd/annotate.hpp"
#include "utd/represent.hpp"
#include "utd/binary_io.hpp"
#include "utd/embed.hpp"
#include "utd/trainlin.hpp"
#include "utd/biaseval.hpp"
#include "utd/debias.hpp"
#include "utd/benchmark.hpp"
