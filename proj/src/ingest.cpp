#include "geoproxy/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoproxy/csv.hpp"
#include "geoproxy/error.hpp"
#include "geoproxy/log.hpp"
#include "geoproxy/raster_io.hpp"

namespace geoproxy::ingest {

namespace {

constexpr std::array<std::string_view, kHealthFactorCount> kFactorDescriptions = {
    "Population (female) age 6 years and above who ever attended school (%)",
    "Population below age 15 years (%)",
    "Sex ratio of the total population (females per 1,000 males)",
    "Sex ratio at birth for children born in the last five years (females per 1,000 males)",
    "Children under age 5 years whose birth was registered (%)",
    "Households with electricity (%)",
    "Households with an improved drinking-water source (%)",
    "Households using improved sanitation facility (%)",
    "Households using clean fuel for cooking (%)",
    "Households using iodized salt (%)",
    "Households with any usual member covered by a health scheme or health insurance (%)",
    "Women who are literate (%)",
    "Men who are literate (%)",
    "Women with 10 or more years of schooling (%)",
    "Women age 20-24 years married before age 18 years (%)",
    "Men age 25-29 years married before age 21 years (%)",
    "Women age 15-19 years who were already mothers or pregnant at the time of the survey (%)",
    "Any method (%)",
    "Any modern method (%)",
    "Female sterilization (%)",
    "Male sterilization (%)",
    "IUD/PPIUD (%)",
    "Pill (%)",
    "Condom (%)",
    "Total unmet need (%)",
    "Unmet need for spacing (%)",
    "Health worker ever talked to female non-users about family planning (%)",
    "Current users ever told about side effects of current method (%)",
    "Mothers who had antenatal check-up in the first trimester (%)",
    "Mothers who had at least 4 antenatal care visits (%)",
    "Mothers whose last birth was protected against neonatal tetanus (%)",
    "Mothers who consumed iron folic acid for 100 days or more when they were pregnant (%)",
    "Mothers who had full antenatal care (%)",
    "Registered pregnancies for which the mother received Mother and Child Protection (MCP) card (%)",
    "Mothers who received postnatal care from a doctor/nurse/LHV/ANM/midwife/other health personnel within 2 days of delivery (%)",
    "Mothers who received financial assistance under Janani Suraksha Yojana (JSY) for births delivered in an institution (%)",
    "Average out of pocket expenditure per delivery in public health facility (Rs.)",
    "Children born at home who were taken to a health facility for check-up within 24 hours of birth (%)",
    "Children who received a health check after birth from a doctor/nurse/LHV/ANM/ midwife/other health personnel within 2 days of birth (%)",
    "Institutional births (%)",
    "Institutional births in public facility (%)",
    "Home delivery conducted by skilled health personnel (out of total deliveries) (%)",
    "Births assisted by a doctor/nurse/LHV/ANM/other health personnel (%)",
    "Births delivered by caesarean section (%)",
    "Births in a private health facility delivered by caesarean section (%)",
    "Births in a public health facility delivered by caesarean section (%)",
    "Children age 12-23 months fully immunized (BCG, measles, and 3 doses each of polio and DPT) (%)",
    "Children age 12-23 months who have received BCG (%)",
    "Children age 12-23 months who have received 3 doses of polio vaccine (%)",
    "Children age 12-23 months who have received 3 doses of DPT vaccine (%)",
    "Children age 12-23 months who have received measles vaccine (%)",
    "Children age 12-23 months who have received 3 doses of Hepatitis B vaccine (%)",
    "Children age 9-59 months who received a vitamin A dose in last 6 months (%)",
    "Children age 12-23 months who received most of the vaccinations in public health facility (%)",
    "Children age 12-23 months who received most of the vaccinations in private health facility (%)",
    "Prevalence of diarrhoea (reported) in the last 2 weeks preceding the survey (%)",
    "Children with diarrhoea in the last 2 weeks who received oral rehydration salts (ORS) (%)",
    "Children with diarrhoea in the last 2 weeks who received zinc (%)",
    "Children with diarrhoea in the last 2 weeks taken to a health facility (%)",
    "Prevalence of symptoms of acute respiratory infection (ARI) in the last 2 weeks preceding the survey (%)",
    "Children with fever or symptoms of ARI in the last 2 weeks preceding the survey taken to a health facility (%)",
    "Children under age 3 years breastfed within one hour of birth (%)",
    "Children under age 6 months exclusively breastfed (%)",
    "Children age 6-8 months receiving solid or semi-solid food and breastmilk (%)",
    "Breastfeeding children age 6-23 months receiving an adequate diet (%)",
    "Non-breastfeeding children age 6-23 months receiving an adequate diet (%)",
    "Total children age 6-23 months receiving an adequate diet (%)",
    "Children under 5 years who are stunted (height-for-age) (%)",
    "Children under 5 years who are wasted (weight-for-height) (%)",
    "Children under 5 years who are severely wasted (weight-for-height) (%)",
    "Children under 5 years who are underweight (weight-for-age) (%)",
    "Women whose Body Mass Index (BMI) is below normal (BMI < 18.5 kg/m2) (%)",
    "Men whose Body Mass Index (BMI) is below normal (BMI < 18.5 kg/m2) (%)",
    "Women who are overweight or obese (BMI >= 25.0 kg/m2) (%)",
    "Men who are overweight or obese (BMI >= 25.0 kg/m2) (%)",
    "Children age 6-59 months who are anaemic (<11.0 g/dl) (%)",
    "Non-pregnant women age 15-49 years who are anaemic (<12.0 g/dl) (%)",
    "Pregnant women age 15-49 years who are anaemic (<11.0 g/dl) (%)",
    "All women age 15-49 years who are anaemic (%)",
    "Men age 15-49 years who are anaemic (<13.0 g/dl) (%)",
    "Blood sugar level - high (>140 mg/dl) (%) women",
    "Blood sugar level - very high (>160 mg/dl) (%) women",
    "Blood sugar level - high (>140 mg/dl) (%) men",
    "Blood sugar level - very high (>160 mg/dl) (%) men",
    "Slightly above normal (Systolic 140-159 mm of Hg and/or Diastolic 90-99 mm of Hg) (%) women",
    "Moderately high (Systolic 160-179 mm of Hg and/or Diastolic 100-109 mm of Hg) (%) women",
    "Very high (Systolic >= 180 mm of Hg and/or Diastolic >= 110 mm of Hg) (%) women",
    "Slightly above normal (Systolic 140-159 mm of Hg and/or Diastolic 90-99 mm of Hg) (%) men",
    "Moderately high (Systolic 160-179 mm of Hg and/or Diastolic 100-109 mm of Hg) (%) men",
    "Very high (Systolic >= 180 mm of Hg and/or Diastolic >= 110 mm of Hg) (%) men",
    "Cervix (%)",
    "Breast (%)",
    "Oral cavity (%)"
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

int parse_column_header(const std::string& h) {
    if (h.size() < 3 || h.front() != '[' || h.back() != ']') throw SchemaError("census header '" + h + "' is not a bracketed column index");
    return static_cast<int>(csv::parse_number(std::string_view(h).substr(1, h.size() - 2)));
}

}  // namespace

std::vector<VillageRecord> parse_village_manifest(std::istream& in) {
    std::vector<VillageRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            VillageRecord v;
            v.village_id = j.at("village_id").get<std::string>();
            v.centroid = {j.at("lat").get<double>(), j.at("lon").get<double>()};
            v.population = j.at("population").get<double>();
            v.tehsil_id = j.at("tehsil_id").get<std::string>();
            v.district_id = j.at("district_id").get<std::string>();
            v.state_id = j.at("state_id").get<std::string>();
            if (v.population < 0) throw SchemaError("negative population");
            out.push_back(std::move(v));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("village manifest line " + std::to_string(lineno) + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError("village manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<VillageRecord> read_village_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_village_manifest(in);
}

void write_village_manifest(const std::filesystem::path& path, const std::vector<VillageRecord>& villages) {
    std::string text;
    for (const auto& v : villages) {
        nlohmann::ordered_json j;
        j["village_id"] = v.village_id;
        j["lat"] = v.centroid.lat;
        j["lon"] = v.centroid.lon;
        j["population"] = v.population;
        j["tehsil_id"] = v.tehsil_id;
        j["district_id"] = v.district_id;
        j["state_id"] = v.state_id;
        text += j.dump() + "\n";
    }
    write_text_file(path, text);
}

std::size_t asset_index(std::string_view name) {
    const auto it = std::find(kAssetNames.begin(), kAssetNames.end(), name);
    if (it == kAssetNames.end()) throw SchemaError("unknown asset '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - kAssetNames.begin());
}

const std::array<AssetFormula, kAssetCount>& asset_formulas() {
    static const std::array<AssetFormula, kAssetCount> formulas = {{
        {"rooms-under-3", {49, 50, 51}, 1.0},
        {"household-size-under-5", {56, 57, 58, 59}, 1.0},
        {"water-treated", {72, 74, 77}, 1.0},
        {"water-untreated", {73, 75}, 1.0},
        {"water-natural", {76, 78, 79, 80, 81}, 1.0},
        {"electric-like", {85, 87}, 1.0},
        {"oil-like", {86, 88, 89}, 1.0},
        {"electronics", {128, 129, 130, 131}, 3.0},
        {"has-phone", {132, 133, 134}, 1.0},
        {"transport-cycle", {135}, 1.0},
        {"transport-motorized", {136, 137}, 1.0},
        {"no-assets", {139}, 1.0},
        {"banking-services-availability", {127}, 1.0},
        {"cook-fuel-processed", {113, 114, 115}, 1.0},
        {"bathroom-within", {103, 104}, 1.0},
        {"permanent-house", {140}, 1.0},
    }};
    return formulas;
}

AssetVector16 build_asset_vector(const CensusRow& row) {
    AssetVector16 out;
    const auto& formulas = asset_formulas();
    for (std::size_t k = 0; k < kAssetCount; ++k) {
        double sum = 0.0;
        for (int col : formulas[k].columns) {
            const auto it = row.find(col);
            if (it == row.end()) throw SchemaError("census row is missing column [" + std::to_string(col) + "] for " + std::string(formulas[k].name));
            sum += it->second;
        }
        out[k] = clamp01(sum / formulas[k].divisor / 100.0);
    }
    return out;
}

const std::vector<TehsilFormula>& tehsil_formulas(int year) {
    static const std::vector<TehsilFormula> f2011 = {
        {"electric-like", "HH-7", {{{9, 11}, 1.0}}, 8},
        {"oil-like", "HH-7", {{{10, 12}, 1.0}}, 8},
        {"electronics", "HH-12", {{{10, 11, 12, 13}, 3.0}, {{20}, 1.0}}, 8},
        {"has-phone", "HH-12", {{{14, 15, 16}, 1.0}}, 8},
        {"transport-cycle", "HH-12", {{{17}, 1.0}}, 8},
        {"transport-motorized", "HH-12", {{{18, 19}, 1.0}}, 8},
        {"no-assets", "HH-12", {{{21}, 1.0}}, 8},
        {"banking-services-availability", "HH-12", {{{9}, 1.0}}, 8},
        {"cook-fuel-processed", "HH-10", {{{14, 15}, 1.0}}, 9},
        {"bathroom-within", "HH-10", {{{9}, 1.0}}, 8},
    };
    static const std::vector<TehsilFormula> f2001 = {
        {"electric-like", "H-9", {{{3, 5}, 1.0}}, 2},
        {"oil-like", "H-9", {{{4, 6}, 1.0}}, 2},
        {"electronics", "H-13", {{{4, 5}, 1.0}}, 2},
        {"has-phone", "H-13", {{{6}, 1.0}}, 2},
        {"transport-cycle", "H-13", {{{7}, 1.0}}, 2},
        {"transport-motorized", "H-13", {{{8, 9}, 1.0}}, 2},
        {"no-assets", "H-13", {{{10}, 1.0}}, 2},
        {"banking-services-availability", "H-13", {{{3}, 1.0}}, 2},
        {"cook-fuel-processed", "H-10", {{{8, 9}, 1.0}}, 3},
        {"bathroom-within", "H-11", {{{3}, 1.0}}, 2},
    };
    if (year == 2011) return f2011;
    if (year == 2001) return f2001;
    throw InputError("no tehsil formulas for census year " + std::to_string(year));
}

std::vector<std::string> tehsil_tables(int year) {
    std::vector<std::string> out;
    for (const auto& f : tehsil_formulas(year))
        if (std::find(out.begin(), out.end(), f.table) == out.end()) out.emplace_back(f.table);
    return out;
}

std::optional<TehsilVector10> build_tehsil_vector(const std::string& tehsil_id, const TehsilTables& tables, int year) {
    const auto& formulas = tehsil_formulas(year);
    TehsilVector10 out;
    out.tehsil_id = tehsil_id;
    out.year = year;
    auto column = [&](const TehsilFormula& f, int col) {
        const auto t = tables.find(std::string(f.table));
        if (t == tables.end()) throw SchemaError("tehsil " + tehsil_id + ": missing table " + std::string(f.table));
        const auto c = t->second.find(col);
        if (c == t->second.end())
            throw SchemaError("tehsil " + tehsil_id + ": table " + std::string(f.table) + " is missing column [" + std::to_string(col) + "]");
        return c->second;
    };
    for (std::size_t k = 0; k < formulas.size(); ++k) {
        const auto& f = formulas[k];
        const double den = column(f, f.denominator);
        if (den <= 0.0) {
            log::warn("ingest", "tehsil=", tehsil_id, " year=", year, " zero denominator for ", f.name, "; tehsil excluded");
            return std::nullopt;
        }
        double num = 0.0;
        for (const auto& term : f.numerator) {
            double s = 0.0;
            for (int col : term.columns) s += column(f, col);
            num += s / term.divisor;
        }
        out.values[k] = clamp01(num / den);
    }
    return out;
}

std::string_view round_name(SurveyRound round) { return round == SurveyRound::nfhs4 ? "NFHS-4" : "NFHS-5"; }

SurveyRound parse_round(std::string_view name) {
    if (name == "NFHS-4" || name == "nfhs4" || name == "4") return SurveyRound::nfhs4;
    if (name == "NFHS-5" || name == "nfhs5" || name == "5") return SurveyRound::nfhs5;
    throw InputError("unknown survey round '" + std::string(name) + "'");
}

std::string_view health_factor_description(int factor) {
    if (factor < 1 || factor > kHealthFactorCount) throw InputError("health factor out of range");
    return kFactorDescriptions[static_cast<std::size_t>(factor - 1)];
}

std::string health_factor_id(int factor) { return "factor-" + std::to_string(factor); }

HealthLoad load_health_vectors(std::istream& in, SurveyRound round) {
    const csv::Table t = csv::parse(in);
    HealthLoad out;
    if (t.header.empty()) return out;
    if (t.header.size() != kHealthFactorCount + 1 || t.header[0] != "district_id")
        throw SchemaError(std::string("survey file for ") + std::string(round_name(round)) + " must have columns district_id, factor-1..factor-93");
    for (int f = 1; f <= kHealthFactorCount; ++f)
        if (t.header[static_cast<std::size_t>(f)] != health_factor_id(f))
            throw SchemaError("survey header column " + std::to_string(f) + " must be " + health_factor_id(f));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row.size() < kHealthFactorCount + 1) {
            ++out.rejected;
            log::warn("ingest", "survey row ", r + 2, " has ", row.size(), " columns; rejected");
            continue;
        }
        HealthVector93 v;
        v.district_id = row[0];
        v.round = round;
        bool ok = true;
        for (int f = 1; f <= kHealthFactorCount && ok; ++f) {
            const auto& cell = row[static_cast<std::size_t>(f)];
            if (csv::is_absent(cell)) continue;
            double x = 0.0;
            try {
                x = csv::parse_number(cell);
            } catch (const InputError&) {
                ok = false;
                break;
            }
            const bool percent = f != 3 && f != 4 && f != 37;
            if (x < 0.0 || (percent && x > 100.0)) ok = false;
            v.factors[static_cast<std::size_t>(f - 1)] = x;
        }
        if (!ok) {
            ++out.rejected;
            log::warn("ingest", "survey row ", r + 2, " (district ", row[0], ") has an invalid value; rejected");
            continue;
        }
        out.vectors[v.district_id] = std::move(v);
    }
    return out;
}

HealthLoad load_health_vectors(const std::filesystem::path& path, SurveyRound round) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return load_health_vectors(in, round);
}

std::map<std::string, CensusRow> read_census_table(const std::filesystem::path& path) {
    const csv::Table t = csv::read(path);
    std::vector<int> cols;
    for (std::size_t c = 1; c < t.header.size(); ++c) cols.push_back(parse_column_header(t.header[c]));
    std::map<std::string, CensusRow> out;
    for (const auto& row : t.rows) {
        if (row.size() != t.header.size()) throw SchemaError(path.string() + ": row for '" + (row.empty() ? "" : row[0]) + "' has the wrong column count");
        CensusRow r;
        for (std::size_t c = 1; c < row.size(); ++c) r[cols[c - 1]] = csv::parse_number(row[c]);
        out[row[0]] = std::move(r);
    }
    return out;
}

void write_census_table(const std::filesystem::path& path, const std::string& id_column,
                        const std::map<std::string, CensusRow>& rows) {
    csv::Table t;
    t.header.push_back(id_column);
    if (!rows.empty())
        for (const auto& [col, v] : rows.begin()->second) t.header.push_back("[" + std::to_string(col) + "]");
    for (const auto& [id, r] : rows) {
        std::vector<std::string> fields{id};
        for (const auto& [col, v] : r) fields.push_back(csv::format_number(v));
        t.rows.push_back(std::move(fields));
    }
    csv::write(path, t);
}

std::map<std::string, DemographicVector> read_demographics(const std::filesystem::path& path) {
    const csv::Table t = csv::read(path);
    const auto id = t.column("village_id");
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) idx[k] = t.column(DemographicVector::names[k]);
    std::map<std::string, DemographicVector> out;
    for (const auto& row : t.rows) {
        std::array<double, 4> v{};
        for (std::size_t k = 0; k < 4; ++k) v[k] = clamp01(csv::parse_number(row.at(idx[k])) / 100.0);
        out[row.at(id)] = {v[0], v[1], v[2], v[3]};
    }
    return out;
}

}  // namespace geoproxy::ingest
