#pragma once

#include <string_view>

namespace hallab::bios::detail {

// Contents of a file under data/bios compiled into the library; throws
// InvalidArgument for an unknown name.
std::string_view bios_data(std::string_view name);

}  // namespace hallab::bios::detail
