#pragma once

#include <chrono>
#include <condition_variable>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>

namespace harmony {

// Concurrent TTL cache with single-flight population: concurrent callers
// asking for the same missing key share one computation. A failed
// computation is not cached; every waiter sees the same exception.
template <typename Key, typename Value>
class TtlCache {
 public:
  using Clock = std::chrono::steady_clock;
  using Now = std::function<Clock::time_point()>;

  explicit TtlCache(Now now = [] { return Clock::now(); }) : now_(std::move(now)) {}

  struct Lookup {
    Value value;
    bool hit = false;  // served from cache or from another caller's flight
  };

  template <typename F>
  Lookup get_or_compute(const Key& key, std::chrono::milliseconds ttl, F&& compute) {
    std::shared_ptr<Flight> flight;
    bool leader = false;
    {
      std::unique_lock lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end() && now_() < it->second.expires) {
        return {it->second.value, true};
      }
      if (auto it = flights_.find(key); it != flights_.end()) {
        flight = it->second;
      } else {
        flight = std::make_shared<Flight>();
        flights_.emplace(key, flight);
        leader = true;
      }
    }
    if (!leader) {
      std::unique_lock lock(flight->mu);
      flight->cv.wait(lock, [&] { return flight->done; });
      if (flight->error) std::rethrow_exception(flight->error);
      return {*flight->value, true};
    }

    std::optional<Value> value;
    std::exception_ptr error;
    try {
      value.emplace(compute());
    } catch (...) {
      error = std::current_exception();
    }
    {
      std::unique_lock lock(mu_);
      flights_.erase(key);
      if (value && ttl.count() > 0) entries_.insert_or_assign(key, Entry{*value, now_() + ttl});
    }
    {
      std::unique_lock lock(flight->mu);
      flight->value = value;
      flight->error = error;
      flight->done = true;
    }
    flight->cv.notify_all();
    if (error) std::rethrow_exception(error);
    return {std::move(*value), false};
  }

  // Last stored value regardless of expiry.
  std::optional<Value> stale(const Key& key) const {
    std::unique_lock lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.value;
  }

  void clear() {
    std::unique_lock lock(mu_);
    entries_.clear();
  }

  std::size_t size() const {
    std::unique_lock lock(mu_);
    return entries_.size();
  }

 private:
  struct Entry {
    Value value;
    Clock::time_point expires;
  };
  struct Flight {
    std::mutex mu;
    std::condition_variable cv;
    bool done = false;
    std::optional<Value> value;
    std::exception_ptr error;
  };

  Now now_;
  mutable std::mutex mu_;
  std::map<Key, Entry> entries_;
  std::map<Key, std::shared_ptr<Flight>> flights_;
};

}  // namespace harmony
