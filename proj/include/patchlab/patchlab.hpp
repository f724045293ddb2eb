#pragma once

#include "patchlab/errors.hpp"
#include "patchlab/core/digest.hpp"
#include "patchlab/core/parallel.hpp"
#include "patchlab/core/rng.hpp"
#include "patchlab/model/config.hpp"
#include "patchlab/model/model.hpp"
#include "patchlab/model/tokenizer.hpp"
#include "patchlab/model/hooks.hpp"
#include "patchlab/model/forward.hpp"
#include "patchlab/model/gguf.hpp"
#include "patchlab/model/toy_format.hpp"
#include "patchlab/intervene/intervention.hpp"
#include "patchlab/generate/chat.hpp"
#include "patchlab/generate/generate.hpp"
#include "patchlab/metrics/scores.hpp"
#include "patchlab/metrics/mann_whitney.hpp"
#include "patchlab/metrics/lexicon.hpp"
#include "patchlab/harness/config.hpp"
#include "patchlab/harness/report.hpp"
#include "patchlab/harness/common.hpp"
#include "patchlab/harness/scan.hpp"
#include "patchlab/harness/flip.hpp"
#include "patchlab/harness/risk.hpp"
#include "patchlab/harness/rank.hpp"
#include "patchlab/harness/tools.hpp"
