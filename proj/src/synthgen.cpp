// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <tuple>

#include "vibertgrid/errors.hpp"
#include "vibertgrid/sampler.hpp"
#include "vibertgrid/text_util.hpp"

namespace vbg {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

// Rows top to bottom, bit 4 is the leftmost column.
const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f = {
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'#', {0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A}},
      {'&', {0x0C, 0x12, 0x14, 0x08, 0x15, 0x12, 0x0D}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'$', {0x04, 0x0F, 0x14, 0x0E, 0x05, 0x1E, 0x04}}, {'\'', {0x04, 0x04, 0x08, 0x00, 0x00, 0x00, 0x00}},
  };
  return f;
}

const Glyph kUnknownGlyph = {0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};

constexpr int kGlyphAdvance = 6;  // 5 columns + 1 gap
constexpr int kMaxAttempts = 10;

const std::vector<std::string> kCompanyAdjectives = {
    "SUNRISE", "GOLDEN", "EVERGREEN", "PACIFIC", "ROYAL",  "UNITED", "SILVER", "ORIENT", "GRAND",
    "PRIME",   "LUCKY",  "BRIGHT",    "NORTHERN", "JADE", "PEARL",  "CRYSTAL", "EASTERN", "MODERN"};
const std::vector<std::string> kCompanyNouns = {
    "TRADING",   "HARDWARE", "BAKERY",  "STATIONERY", "PHARMACY", "RESTAURANT", "MART",      "BOOKSTORE",
    "ELECTRICAL", "KITCHEN", "TEXTILE", "MOTOR",      "FLORIST",  "OPTICAL",    "FURNITURE", "GROCER"};
const std::vector<std::string> kCompanySuffixes = {"SDN BHD", "ENTERPRISE", "CO", "LTD", "PLT", "& SONS"};
const std::vector<std::string> kStreets = {"JALAN MAWAR", "JALAN BUNGA RAYA", "LORONG KENANGA", "JALAN SULTAN",
                                           "JALAN UTAMA", "JALAN PERDANA",    "JALAN MERANTI",  "JALAN KASTURI"};
const std::vector<std::string> kAreas = {"TAMAN JAYA", "TAMAN MOLEK", "BANDAR BARU", "TAMAN SRI PULAI",
                                         "SEKSYEN 7",  "TAMAN DAMAI", "KAMPUNG BARU"};
const std::vector<std::string> kCities = {"SKUDAI", "JOHOR BAHRU", "KUALA LUMPUR", "SHAH ALAM",
                                          "PETALING JAYA", "IPOH", "KLANG", "SEREMBAN"};
const std::vector<std::string> kItems = {"COFFEE", "TEA",     "NASI LEMAK", "BREAD",  "PEN",      "NOTEBOOK",
                                         "BATTERY", "CABLE",  "SOAP",       "RICE",   "SUGAR",    "MILK",
                                         "TISSUE", "GLUE",    "TAPE",       "SCREW",  "BULB",     "NOODLES",
                                         "ENVELOPE", "MARKER", "CHARGER",   "FOLDER", "BISCUIT",  "JUICE"};
const std::vector<std::string> kMonths = {"JAN", "FEB", "MAR", "APR", "MAY", "JUN",
                                          "JUL", "AUG", "SEP", "OCT", "NOV", "DEC"};

enum class Align { kLeft, kCenter, kSplit };

struct LineWord {
  std::string text;
  std::string field;  // empty: no label
};

struct Line {
  Align align = Align::kLeft;
  std::vector<LineWord> left;
  std::vector<LineWord> right;  // kSplit only: right-aligned group
};

std::vector<LineWord> words_of(const std::string& text, const std::string& field = "") {
  std::vector<LineWord> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back({w, field});
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

int uniform(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

bool bernoulli(Rng& rng, double p) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(rng) < p;
}

std::string money(int cents) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%d.%02d", cents / 100, cents % 100);
  return buf;
}

std::string two(int v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d", v);
  return buf;
}

struct Content {
  std::string company;
  std::vector<std::string> address_lines;
  std::string tel;
  std::string reg_no;
  std::string invoice_no;
  int day = 1, month = 1, year = 2018, hour = 0, minute = 0;
  std::vector<std::tuple<std::string, int, int>> items;  // name, qty, unit cents
  int subtotal = 0, tax = 0, total = 0, cash = 0, change = 0;
};

Content make_content(Rng& rng) {
  Content c;
  c.company = pick(kCompanyAdjectives, rng) + " " + pick(kCompanyNouns, rng) + " " + pick(kCompanySuffixes, rng);
  c.address_lines.push_back("NO " + std::to_string(uniform(rng, 1, 199)) + " " + pick(kStreets, rng) + " " +
                            std::to_string(uniform(rng, 1, 12)));
  c.address_lines.push_back(pick(kAreas, rng) + " " + std::to_string(uniform(rng, 10000, 89999)) + " " +
                            pick(kCities, rng));
  c.tel = "0" + std::to_string(uniform(rng, 3, 9)) + "-" + std::to_string(uniform(rng, 2000000, 9999999));
  c.reg_no = std::to_string(uniform(rng, 100000, 999999)) + "-" + std::string(1, static_cast<char>('A' + uniform(rng, 0, 25)));
  c.invoice_no = std::to_string(uniform(rng, 10000, 99999));
  c.day = uniform(rng, 1, 28);
  c.month = uniform(rng, 1, 12);
  c.year = uniform(rng, 2015, 2021);
  c.hour = uniform(rng, 8, 22);
  c.minute = uniform(rng, 0, 59);
  const int n_items = uniform(rng, 2, 4);
  for (int i = 0; i < n_items; ++i) {
    const int qty = uniform(rng, 1, 3);
    const int unit = uniform(rng, 100, 4000);
    c.items.emplace_back(pick(kItems, rng), qty, unit);
    c.subtotal += qty * unit;
  }
  c.tax = std::max(1, c.subtotal * 6 / 100);
  c.total = c.subtotal + c.tax;
  c.cash = (c.total / 1000 + 1) * 1000 + 1000 * uniform(rng, 0, 2);
  c.change = c.cash - c.total;
  if (c.change == c.total) {
    c.cash += 500;
    c.change += 500;
  }
  return c;
}

std::string date_text(const Content& c, int style) {
  if (style == 0) return two(c.day) + "/" + two(c.month) + "/" + std::to_string(c.year);
  if (style == 1) return two(c.day) + "-" + two(c.month) + "-" + std::to_string(c.year);
  return two(c.day) + " " + kMonths[static_cast<std::size_t>(c.month - 1)] + " " + std::to_string(c.year);
}

struct TemplateFields {
  bool total, date, company, address;
};

// Field inclusion probabilities per template: TOTAL, DATE, COMPANY, ADDRESS.
constexpr double kFieldProb[3][4] = {
    {1.00, 0.95, 1.00, 0.90},
    {0.95, 0.90, 0.95, 0.85},
    {0.90, 0.85, 1.00, 0.70},
};

int field_slot(const std::string& field) {
  if (field == "TOTAL") return 0;
  if (field == "DATE") return 1;
  if (field == "COMPANY") return 2;
  if (field == "ADDRESS") return 3;
  return -1;
}

std::vector<Line> layout(int template_index, const Content& c, const TemplateFields& f) {
  std::vector<Line> lines;
  auto add = [&](Align a, std::vector<LineWord> left, std::vector<LineWord> right = {}) {
    lines.push_back(Line{a, std::move(left), std::move(right)});
  };
  auto cat = [](std::vector<LineWord> a, const std::vector<LineWord>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  // A field left out of the page is not rendered at all.
  const std::vector<std::string> no_lines;
  const auto& address_lines = f.address ? c.address_lines : no_lines;
  switch (template_index) {
    case 0: {
      if (f.company) add(Align::kCenter, words_of(c.company, "COMPANY"));
      add(Align::kCenter, words_of("(CO REG " + c.reg_no + ")"));
      for (const auto& a : address_lines) add(Align::kCenter, words_of(a, "ADDRESS"));
      add(Align::kCenter, words_of("TEL: " + c.tel));
      add(Align::kLeft, words_of("INVOICE NO: " + c.invoice_no));
      if (f.date)
        add(Align::kSplit, cat(words_of("DATE:"), words_of(date_text(c, 0), "DATE")),
            words_of("TIME: " + two(c.hour) + ":" + two(c.minute)));
      else
        add(Align::kSplit, {}, words_of("TIME: " + two(c.hour) + ":" + two(c.minute)));
      for (const auto& [name, qty, unit] : c.items)
        add(Align::kSplit, words_of(name + " " + std::to_string(qty) + " X " + money(unit)), words_of(money(qty * unit)));
      add(Align::kSplit, words_of("SUBTOTAL:"), words_of(money(c.subtotal)));
      add(Align::kSplit, words_of("TAX 6%:"), words_of(money(c.tax)));
      if (f.total) add(Align::kSplit, words_of("TOTAL:"), words_of(money(c.total), "TOTAL"));
      add(Align::kSplit, words_of("CASH:"), words_of(money(c.cash)));
      add(Align::kSplit, words_of("CHANGE:"), words_of(money(c.change)));
      add(Align::kCenter, words_of("THANK YOU"));
      break;
    }
    case 1: {
      add(Align::kCenter, words_of("TAX INVOICE"));
      if (f.company) add(Align::kLeft, words_of(c.company, "COMPANY"));
      for (const auto& a : address_lines) add(Align::kLeft, words_of(a, "ADDRESS"));
      add(Align::kLeft, words_of("GST NO: 00" + c.reg_no.substr(0, 6)));
      if (f.date)
        add(Align::kSplit, words_of("INV: " + c.invoice_no), cat(words_of("DATE:"), words_of(date_text(c, 1), "DATE")));
      else
        add(Align::kLeft, words_of("INV: " + c.invoice_no));
      add(Align::kSplit, words_of("ITEM QTY"), words_of("AMOUNT"));
      for (const auto& [name, qty, unit] : c.items)
        add(Align::kSplit, words_of(name + " " + std::to_string(qty)), words_of(money(qty * unit)));
      add(Align::kSplit, words_of("TOTAL EXCL TAX"), words_of(money(c.subtotal)));
      add(Align::kSplit, words_of("GST 6%"), words_of(money(c.tax)));
      if (f.total) add(Align::kSplit, words_of("NET TOTAL"), words_of(money(c.total), "TOTAL"));
      add(Align::kSplit, words_of("PAID"), words_of(money(c.cash)));
      add(Align::kSplit, words_of("BALANCE"), words_of(money(c.change)));
      break;
    }
    default: {
      if (f.company) add(Align::kLeft, words_of(c.company, "COMPANY"));
      if (address_lines.size() >= 2) {
        add(Align::kLeft, words_of(address_lines[0], "ADDRESS"));
        add(Align::kSplit, words_of(address_lines[1], "ADDRESS"), words_of("TEL " + c.tel));
      } else {
        add(Align::kSplit, {}, words_of("TEL " + c.tel));
      }
      for (const auto& [name, qty, unit] : c.items)
        add(Align::kSplit, words_of(std::to_string(qty) + " " + name), words_of(money(qty * unit)));
      add(Align::kSplit, words_of("SUB TOTAL"), words_of(money(c.subtotal)));
      add(Align::kSplit, words_of("SST"), words_of(money(c.tax)));
      if (f.total) add(Align::kSplit, words_of("TOTAL (RM)"), words_of(money(c.total), "TOTAL"));
      add(Align::kSplit, words_of("TENDERED"), words_of(money(c.cash)));
      if (f.date)
        add(Align::kSplit, words_of(date_text(c, 2), "DATE"), words_of(two(c.hour) + ":" + two(c.minute)));
      add(Align::kCenter, words_of("RCPT " + c.invoice_no));
      break;
    }
  }
  return lines;
}

const Glyph& glyph(char ch) {
  const auto& f = font();
  auto it = f.find(ch);
  return it == f.end() ? kUnknownGlyph : it->second;
}

std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void GenSpec::validate() const {
  if (min_width < 32 || max_width < min_width) throw UsageError("gen spec: need 32 <= min_width <= max_width");
  if (max_height < 32) throw UsageError("gen spec: max_height must be >= 32");
  if (glyph_scale < 1) throw UsageError("gen spec: glyph_scale must be >= 1");
  if (templates < 1 || templates > 3) throw UsageError("gen spec: templates must be in [1, 3]");
  if (pixel_noise < 0 || pixel_noise > 1) throw UsageError("gen spec: pixel_noise must be in [0, 1]");
  if (box_jitter < 0) throw UsageError("gen spec: box_jitter must be >= 0");
  if (schema.size() == 0) throw UsageError("gen spec: schema must list at least one field");
}

GenSpec parse_gen_spec(std::string_view text) {
  GenSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto to_int = [&](const std::string& k, const std::string& v) {
    try {
      std::size_t used = 0;
      long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("gen spec: '" + k + "' expects an integer, got '" + v + "'");
    }
  };
  auto to_double = [&](const std::string& k, const std::string& v) {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("gen spec: '" + k + "' expects a number, got '" + v + "'");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_copy(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("gen spec line " + std::to_string(lineno) + ": expected key=value");
    const std::string k = trim_copy(line.substr(0, eq));
    const std::string v = trim_copy(line.substr(eq + 1));
    if (k == "min_width") spec.min_width = static_cast<int>(to_int(k, v));
    else if (k == "max_width") spec.max_width = static_cast<int>(to_int(k, v));
    else if (k == "min_height") spec.min_height = static_cast<int>(to_int(k, v));
    else if (k == "max_height") spec.max_height = static_cast<int>(to_int(k, v));
    else if (k == "glyph_scale") spec.glyph_scale = static_cast<int>(to_int(k, v));
    else if (k == "templates") spec.templates = static_cast<int>(to_int(k, v));
    else if (k == "pixel_noise") spec.pixel_noise = to_double(k, v);
    else if (k == "box_jitter") spec.box_jitter = to_double(k, v);
    else if (k == "seed") spec.seed = static_cast<std::uint64_t>(to_int(k, v));
    else if (k == "fields") {
      std::vector<std::string> names;
      std::istringstream parts(v);
      std::string part;
      while (std::getline(parts, part, ',')) names.push_back(trim_copy(part));
      try {
        spec.schema = FieldSchema(names);
      } catch (const Error& e) {
        throw UsageError(std::string("gen spec: ") + e.what());
      }
    } else {
      throw UsageError("gen spec: unknown key '" + k + "'");
    }
  }
  spec.validate();
  return spec;
}

std::string to_gen_spec_text(const GenSpec& spec) {
  std::ostringstream out;
  out << "min_width=" << spec.min_width << "\nmax_width=" << spec.max_width << "\nmin_height=" << spec.min_height
      << "\nmax_height=" << spec.max_height << "\nglyph_scale=" << spec.glyph_scale << "\nfields=";
  for (std::size_t i = 0; i < spec.schema.size(); ++i) out << (i ? "," : "") << spec.schema.name(i);
  out << "\ntemplates=" << spec.templates << "\npixel_noise=" << spec.pixel_noise << "\nbox_jitter=" << spec.box_jitter
      << "\nseed=" << spec.seed << "\n";
  return out.str();
}

double field_probability(int template_index, const std::string& field) {
  const int slot = field_slot(field);
  if (slot < 0 || template_index < 0 || template_index > 2) return 0.0;
  return kFieldProb[template_index][slot];
}

double expected_field_frequency(const GenSpec& spec, const std::string& field) {
  double sum = 0;
  for (int t = 0; t < spec.templates; ++t) sum += field_probability(t, field);
  return sum / spec.templates;
}

std::string synthetic_page_id(std::uint64_t seed, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "syn%llu-%06d", static_cast<unsigned long long>(seed), index);
  return buf;
}

int text_width(const std::string& text, int scale) {
  if (text.empty()) return 0;
  return (static_cast<int>(text.size()) * kGlyphAdvance - 1) * scale;
}

void render_text(Image& image, const std::string& text, int x, int y, int scale, float ink) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Glyph& g = glyph(text[i]);
    const int gx = x + static_cast<int>(i) * kGlyphAdvance * scale;
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (!((g[static_cast<std::size_t>(row)] >> (4 - col)) & 1)) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            const int px = gx + col * scale + dx;
            const int py = y + row * scale + dy;
            if (px < 0 || py < 0 || px >= image.width || py >= image.height) continue;
            for (int c = 0; c < 3; ++c) image.at(py, px, c) = ink;
          }
        }
      }
    }
  }
}

GeneratedDocument generate_document(const GenSpec& spec, int index) {
  spec.validate();
  const std::string page_id = synthetic_page_id(spec.seed, index);
  Rng rng = derive_rng(spec.seed, page_id, 0);
  const int template_index = uniform(rng, 0, spec.templates - 1);
  TemplateFields f{};
  f.total = bernoulli(rng, kFieldProb[template_index][0]);
  f.date = bernoulli(rng, kFieldProb[template_index][1]);
  f.company = bernoulli(rng, kFieldProb[template_index][2]);
  f.address = bernoulli(rng, kFieldProb[template_index][3]);
  const Content content = make_content(rng);
  const auto lines = layout(template_index, content, f);
  const int s = spec.glyph_scale;
  const int line_height = 11 * s;
  const int margin = 8 * s;
  const int space = kGlyphAdvance * s;

  auto group_width = [&](const std::vector<LineWord>& ws) {
    int w = 0;
    for (std::size_t i = 0; i < ws.size(); ++i) w += text_width(ws[i].text, s) + (i ? space : 0);
    return w;
  };

  int width = uniform(rng, spec.min_width, spec.max_width);
  const int jitter_top = uniform(rng, 0, 2 * s);
  for (int attempt = 0;; ++attempt) {
    bool fits = true;
    for (const auto& line : lines) {
      const int need = group_width(line.left) + (line.right.empty() ? 0 : 2 * space + group_width(line.right));
      if (need > width - 2 * margin) fits = false;
    }
    int height = 2 * margin + jitter_top + static_cast<int>(lines.size()) * line_height;
    height = std::max(height, spec.min_height);
    if (height > spec.max_height) fits = false;
    if (!fits) {
      if (attempt + 1 >= kMaxAttempts)
        throw ValidationError("synthgen: layout of " + page_id + " does not fit after " + std::to_string(kMaxAttempts) +
                              " attempts");
      width += std::max(16, width / 10);
      continue;
    }

    GeneratedDocument out;
    Document& doc = out.document;
    doc.page_id = page_id;
    doc.image = Image(height, width, 1.0f);
    std::uniform_real_distribution<float> ink_dist(0.0f, 0.25f);
    const float ink = ink_dist(rng);
    std::uniform_real_distribution<double> jit(0.0, spec.box_jitter);
    std::map<std::string, std::string> values;

    auto place = [&](const std::vector<LineWord>& ws, int x, int y) {
      for (const auto& w : ws) {
        const int tw = text_width(w.text, s);
        render_text(doc.image, w.text, x, y, s, ink);
        Word word;
        word.text = w.text;
        const double l = std::max(0.0, x - jit(rng));
        const double t = std::max(0.0, y - jit(rng));
        const double r = std::min(static_cast<double>(width), x + tw + jit(rng));
        const double b = std::min(static_cast<double>(height), y + 7 * s + jit(rng));
        word.quad = make_rect_quad(l, t, r, b);
        if (!w.field.empty()) {
          if (auto k = spec.schema.find(w.field)) {
            word.labels.insert(*k);
            auto& v = values[w.field];
            v += (v.empty() ? "" : " ") + w.text;
          }
        }
        doc.words.push_back(std::move(word));
        x += tw + space;
      }
    };

    int y = margin + jitter_top;
    for (const auto& line : lines) {
      const int lw = group_width(line.left);
      switch (line.align) {
        case Align::kLeft: place(line.left, margin, y); break;
        case Align::kCenter: place(line.left, (width - lw) / 2, y); break;
        case Align::kSplit:
          place(line.left, margin, y);
          place(line.right, width - margin - group_width(line.right), y);
          break;
      }
      y += line_height;
    }

    if (spec.pixel_noise > 0) {
      std::uniform_real_distribution<float> noise(-static_cast<float>(spec.pixel_noise),
                                                  static_cast<float>(spec.pixel_noise));
      for (auto& p : doc.image.pixels) p = std::clamp(p + noise(rng), 0.0f, 1.0f);
    }
    out.transcripts = values;
    return out;
  }
}

std::string split_of(const std::string& page_id) { return fnv1a64(page_id) % 100 < 80 ? "train" : "test"; }

std::vector<GeneratedDocument> generate_dataset(const GenSpec& spec, int n, const std::string& out_dir) {
  if (n < 1) throw UsageError("generate_dataset: n must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());
  auto write = [](const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + p.string() + "'");
  };
  std::vector<GeneratedDocument> docs;
  std::string manifest = "#fields ";
  for (std::size_t i = 0; i < spec.schema.size(); ++i) manifest += (i ? "," : "") + spec.schema.name(i);
  manifest += "\n";
  for (int i = 0; i < n; ++i) {
    auto g = generate_document(spec, i);
    const fs::path base = fs::path(out_dir) / g.document.page_id;
    write(base.string() + ".ppm", encode_ppm(g.document.image));
    write(base.string() + ".ocr.json", dump_ocr_document(g.document, spec.schema));
    write(base.string() + ".labels.json", dump_labels_file(g.document.page_id, g.transcripts));
    manifest += g.document.page_id + " " + split_of(g.document.page_id) + "\n";
    docs.push_back(std::move(g));
  }
  write(fs::path(out_dir) / "manifest.txt", manifest);
  return docs;
}

}  // namespace vbg
