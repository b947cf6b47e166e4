#pragma once

// Umbrella header for the event-stream detection library.

#include "evstream/controller.hpp"
#include "evstream/errors.hpp"
#include "evstream/event_io.hpp"
#include "evstream/events.hpp"
#include "evstream/metrics.hpp"
#include "evstream/model.hpp"
#include "evstream/nano_fit.hpp"
#include "evstream/pipeline.hpp"
#include "evstream/rng.hpp"
#include "evstream/spatial.hpp"
#include "evstream/temporal.hpp"
#include "evstream/tensor.hpp"
#include "evstream/weights.hpp"
