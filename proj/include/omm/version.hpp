#pragma once

#define OMM_VERSION "0.1.0"
