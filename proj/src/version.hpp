#pragma once

#define HCTB_VERSION_STRING "0.1.0"
