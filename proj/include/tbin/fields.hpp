#pragma once

// Structs of named tensors (parameter groups) expose `fields()` returning a
// std::tie of their members and a static `kNames` array. These helpers walk
// one or two such structs in declaration order.

#include <cstddef>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <utility>

namespace tbin {

template <class S, class F>
void for_each_field(S& s, F&& f) {
  auto t = s.fields();
  constexpr std::size_t n = std::tuple_size_v<decltype(t)>;
  using Plain = std::remove_cvref_t<S>;
  static_assert(Plain::kNames.size() == n, "kNames must name every field");
  [&]<std::size_t... I>(std::index_sequence<I...>) {
    (f(Plain::kNames[I], std::get<I>(t)), ...);
  }(std::make_index_sequence<n>{});
}

template <class A, class B, class F>
void zip_fields(A& a, B& b, F&& f) {
  auto ta = a.fields();
  auto tb = b.fields();
  constexpr std::size_t n = std::tuple_size_v<decltype(ta)>;
  static_assert(n == std::tuple_size_v<decltype(tb)>);
  using Plain = std::remove_cvref_t<A>;
  [&]<std::size_t... I>(std::index_sequence<I...>) {
    (f(Plain::kNames[I], std::get<I>(ta), std::get<I>(tb)), ...);
  }(std::make_index_sequence<n>{});
}

}  // namespace tbin
