#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace plaquemech {

/// Intimal plaque classes, ordered by ascending nominal HU.
enum class PlaqueComponent : std::uint8_t { LipidRich = 0, Fibrotic = 1, NormalIntima = 2, Calcification = 3 };

inline constexpr std::size_t kNumComponents = 4;

inline constexpr std::array<PlaqueComponent, kNumComponents> kAllComponents{
    PlaqueComponent::LipidRich, PlaqueComponent::Fibrotic, PlaqueComponent::NormalIntima,
    PlaqueComponent::Calcification};

enum class Layer : std::uint8_t { Intima = 0, Media = 1, Adventitia = 2 };

/// Everything a mesh element can be made of: the four plaque classes for the
/// intima plus the two fixed-thickness outer layers.
enum class Tissue : std::uint8_t {
  LipidRich = 0,
  Fibrotic = 1,
  NormalIntima = 2,
  Calcification = 3,
  Media = 4,
  Adventitia = 5,
};

inline constexpr std::size_t kNumTissues = 6;

inline constexpr std::array<Tissue, kNumTissues> kAllTissues{
    Tissue::LipidRich, Tissue::Fibrotic, Tissue::NormalIntima,
    Tissue::Calcification, Tissue::Media, Tissue::Adventitia};

constexpr Tissue to_tissue(PlaqueComponent c) { return static_cast<Tissue>(static_cast<std::uint8_t>(c)); }

constexpr std::size_t index_of(PlaqueComponent c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index_of(Tissue t) { return static_cast<std::size_t>(t); }

/// snake_case names used in config keys and CSV output.
constexpr std::string_view name_of(Tissue t) {
  switch (t) {
    case Tissue::LipidRich: return "lipid_rich";
    case Tissue::Fibrotic: return "fibrotic";
    case Tissue::NormalIntima: return "normal_intima";
    case Tissue::Calcification: return "calcification";
    case Tissue::Media: return "media";
    case Tissue::Adventitia: return "adventitia";
  }
  return "unknown";
}

constexpr std::string_view name_of(PlaqueComponent c) { return name_of(to_tissue(c)); }

constexpr std::string_view name_of(Layer l) {
  switch (l) {
    case Layer::Intima: return "intima";
    case Layer::Media: return "media";
    case Layer::Adventitia: return "adventitia";
  }
  return "unknown";
}

inline std::optional<Tissue> tissue_from_name(std::string_view name) {
  for (auto t : kAllTissues)
    if (name_of(t) == name) return t;
  return std::nullopt;
}

inline std::optional<PlaqueComponent> component_from_name(std::string_view name) {
  for (auto c : kAllComponents)
    if (name_of(c) == name) return c;
  return std::nullopt;
}

}  // namespace plaquemech
