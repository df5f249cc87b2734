#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace arinspect::sync {

/// Total order on writes: timestamp, then client id, then event id. The
/// greatest stamp is the most recent write.
struct WriteStamp {
    std::int64_t timestamp_ms = 0;
    std::string client_id;
    std::string event_id;

    auto operator<=>(const WriteStamp&) const = default;
    bool operator==(const WriteStamp&) const = default;
};

/// One write into a register.
///
/// `base` is the event id of the write the author had observed for this field
/// when making the edit. A root write (marker creation, record append) is
/// implicitly observed by every non-root write.
template <typename T, typename Source>
struct RegisterWrite {
    WriteStamp stamp;
    std::string base;
    bool root = false;
    T value;
    std::shared_ptr<const Source> source;
};

/// Last-write-wins register that keeps every write it has seen, so the final
/// value and the set of superseded concurrent writes depend only on which
/// writes arrived, not on their order.
template <typename T, typename Source>
class LwwRegister {
public:
    using Write = RegisterWrite<T, Source>;

    struct Loss {
        const Write* loser;
        const Write* winner;  // earliest-stamped later write that never observed the loser
    };

    /// False if a write with the same stamp is already present.
    bool insert(Write w) {
        const auto key = w.stamp;
        auto [it, inserted] = writes_.emplace(key, std::move(w));
        if (inserted) by_event_.emplace(it->second.stamp.event_id, key);
        return inserted;
    }

    bool empty() const noexcept { return writes_.empty(); }
    std::size_t size() const noexcept { return writes_.size(); }

    const Write* winner() const { return writes_.empty() ? nullptr : &writes_.rbegin()->second; }

    const Write* root() const {
        const Write* best = nullptr;
        for (const auto& [stamp, w] : writes_) {
            if (w.root) best = &w;  // highest-stamped root when roots collide
        }
        return best;
    }

    /// True if `later` was made with `earlier` in view.
    bool observed(const Write& later, const Write& earlier) const {
        if (&later == &earlier) return true;
        if (earlier.root && !later.root) return true;
        std::string cur = later.base;
        for (std::size_t steps = 0; steps <= writes_.size() && !cur.empty(); ++steps) {
            if (cur == earlier.stamp.event_id) return true;
            auto it = by_event_.find(cur);
            if (it == by_event_.end()) return false;
            cur = writes_.at(it->second).base;
        }
        return false;
    }

    /// Writes overwritten by a later-stamped write whose author had not seen them.
    std::vector<Loss> concurrent_losses() const {
        std::vector<Loss> out;
        for (auto it = writes_.begin(); it != writes_.end(); ++it) {
            for (auto later = std::next(it); later != writes_.end(); ++later) {
                if (!observed(later->second, it->second)) {
                    out.push_back({&it->second, &later->second});
                    break;
                }
            }
        }
        return out;
    }

    const std::map<WriteStamp, Write>& writes() const noexcept { return writes_; }

private:
    std::map<WriteStamp, Write> writes_;
    std::unordered_map<std::string, WriteStamp> by_event_;
};

}  // namespace arinspect::sync
