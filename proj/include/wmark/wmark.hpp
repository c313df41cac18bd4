#pragma once

#include "wmark/attacks.hpp"
#include "wmark/bytes.hpp"
#include "wmark/commit.hpp"
#include "wmark/data.hpp"
#include "wmark/error.hpp"
#include "wmark/io.hpp"
#include "wmark/nn.hpp"
#include "wmark/public_verify.hpp"
#include "wmark/report.hpp"
#include "wmark/rng.hpp"
#include "wmark/sha256.hpp"
#include "wmark/sizing.hpp"
#include "wmark/watermark.hpp"
