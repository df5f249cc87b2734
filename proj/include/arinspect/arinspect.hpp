#pragma once

#include "arinspect/alignment_eval.hpp"
#include "arinspect/client_sim.hpp"
#include "arinspect/content_hash.hpp"
#include "arinspect/damage_model.hpp"
#include "arinspect/error.hpp"
#include "arinspect/experiment.hpp"
#include "arinspect/geometry.hpp"
#include "arinspect/json_io.hpp"
#include "arinspect/link.hpp"
#include "arinspect/lww_register.hpp"
#include "arinspect/net_harness.hpp"
#include "arinspect/session_service.hpp"
#include "arinspect/sync_engine.hpp"
#include "arinspect/tcp.hpp"
#include "arinspect/wire.hpp"
