#include "psydef/backends.hpp"

#include <chrono>
#include <thread>

namespace psydef {

void RetryPolicy::sleep_for(int ms) const {
    if (sleeper) {
        sleeper(ms);
    } else if (ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }
}

std::vector<double> NliBackend::entail_many(const std::string& premise,
                                            std::span<const std::string> hypotheses) {
    std::vector<double> out;
    out.reserve(hypotheses.size());
    for (const std::string& h : hypotheses) out.push_back(entail(premise, h));
    return out;
}

}  // namespace psydef
