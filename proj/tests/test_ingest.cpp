#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "nexus/error.hpp"
#include "nexus/ingest.hpp"

using namespace nexus;

namespace {

std::istringstream table(const std::string& header, const std::string& body) {
    return std::istringstream(header + "\n" + body);
}

const std::string kDemand = "city_id,sector,year,month,value,unit";
const std::string kClimate = "city_id,date,tdry_c,twet_c,tdew_c,rh_pct,wind_ms,precip_mm";

DatasetBundle complete_city(const std::string& id, int y0, int y1) {
    DatasetBundle b;
    b.cities.push_back({id, "Test", "ZZ", 40.0, -90.0, "ENC"});
    for (int y = y0; y <= y1; ++y) {
        for (Sector s : {Sector::water, Sector::electricity}) {
            b.population.push_back({id, s, y, 1000.0});
            for (int m = 1; m <= 12; ++m) b.demand.push_back({id, s, y, m, 10.0, std::string(unit_for(s))});
        }
    }
    using std::chrono::sys_days;
    const sys_days first{std::chrono::year{y0} / 1 / 1};
    const sys_days last{std::chrono::year{y1} / 12 / 31};
    for (sys_days d = first; d <= last; d += std::chrono::days{1}) {
        b.climate.push_back({id, Date{d}, 20.0, 15.0, 10.0, 50.0, 2.0, 0.0});
    }
    return b;
}

}  // namespace

TEST_CASE("demand rows parse in order") {
    auto in = table(kDemand, "nyc,electricity,2010,7,350000,MWh\nnyc,water,2010,7,1.2e6,m3\n");
    const auto rows = parse_demand_csv(in);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].city_id == "nyc");
    CHECK(rows[0].sector == Sector::electricity);
    CHECK(rows[0].year == 2010);
    CHECK(rows[0].month == 7);
    CHECK(rows[0].value == 350000.0);
    CHECK(rows[1].value == 1.2e6);
}

TEST_CASE("demand unit must match sector") {
    auto in = table(kDemand, "nyc,water,2010,7,1.2e6,MWh\n");
    CHECK_THROWS_WITH_AS(parse_demand_csv(in), doctest::Contains("unit mismatch for sector water"), InputError);
}

TEST_CASE("duplicate demand key is rejected with its line") {
    auto in = table(kDemand, "nyc,electricity,2010,7,1,MWh\nnyc,electricity,2010,7,2,MWh\n");
    CHECK_THROWS_WITH_AS(parse_demand_csv(in), doctest::Contains("line 3: duplicate (nyc, electricity, 2010, 7)"),
                         InputError);
}

TEST_CASE("wrong header and short rows") {
    auto bad_header = table("city,sector,year,month,value,unit", "nyc,water,2010,7,1,m3\n");
    CHECK_THROWS_AS(parse_demand_csv(bad_header), InputError);
    auto short_row = table(kDemand, "nyc,water,2010,7,1\n");
    CHECK_THROWS_AS(parse_demand_csv(short_row), InputError);
    auto bad_month = table(kDemand, "nyc,water,2010,13,1,m3\n");
    CHECK_THROWS_AS(parse_demand_csv(bad_month), InputError);
}

TEST_CASE("comments, blank lines and padding are ignored") {
    auto in = table("# exported\n" + kDemand, "\n  nyc , water , 2010 , 7 , 5 , m3 \n# end\n");
    const auto rows = parse_demand_csv(in);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].city_id == "nyc");
    CHECK(rows[0].value == 5.0);
}

TEST_CASE("climate rows validate ranges and dates") {
    auto ok = table(kClimate, "phx,2012-06-01,41.0,22.5,10.0,15.0,3.2,0.0\n");
    const auto rows = parse_climate_csv(ok);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].date == Date{std::chrono::year{2012} / 6 / 1});
    CHECK(rows[0].tdry == 41.0);

    auto us_date = table(kClimate, "phx,06/01/2012,41.0,22.5,10.0,15.0,3.2,0.0\n");
    CHECK_THROWS_WITH_AS(parse_climate_csv(us_date), doctest::Contains("date format"), InputError);
    auto rh = table(kClimate, "phx,2012-06-01,41.0,22.5,10.0,115.0,3.2,0.0\n");
    CHECK_THROWS_WITH_AS(parse_climate_csv(rh), doctest::Contains("rh out of range"), InputError);
    auto rain = table(kClimate, "phx,2012-06-01,41.0,22.5,10.0,15.0,3.2,-1\n");
    CHECK_THROWS_AS(parse_climate_csv(rain), InputError);
    auto dew = table(kClimate, "phx,2012-06-01,20.0,22.5,25.0,15.0,3.2,0\n");
    CHECK_THROWS_AS(parse_climate_csv(dew), InputError);
    auto feb30 = table(kClimate, "phx,2012-02-30,20.0,15,10,15.0,3.2,0\n");
    CHECK_THROWS_AS(parse_climate_csv(feb30), InputError);
}

TEST_CASE("registry warns on unknown region codes") {
    auto in = table("city_id,name,state,lat,lon,region", "chi,Chicago,IL,41.88,-87.63,ENC\nzzz,Nowhere,ZZ,0,0,XX\n");
    std::vector<std::string> warnings;
    const auto rows = parse_registry_csv(in, &warnings);
    CHECK(rows.size() == 2);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("XX") != std::string::npos);
}

TEST_CASE("ssp, analog and population tables") {
    auto ssp = table("city_id,ssp,year,population", "chi,SSP5,2080,6200000\n");
    const auto s = parse_ssp_csv(ssp);
    REQUIRE(s.size() == 1);
    CHECK(s[0].ssp == 5);
    CHECK(s[0].population == 6200000.0);
    auto ssp7 = table("city_id,ssp,year,population", "chi,SSP7,2080,1\n");
    CHECK_THROWS_WITH_AS(parse_ssp_csv(ssp7), doctest::Contains("ssp out of range"), InputError);

    auto an = table("target_city_id,scenario,analog_id,source", "nyc,rcp85,jonesboro_ar,ensemble\n");
    const auto a = parse_analog_csv(an);
    REQUIRE(a.size() == 1);
    CHECK(a[0].scenario == Scenario::rcp85);
    CHECK(a[0].analog_id == "jonesboro_ar");
    auto bad_source = table("target_city_id,scenario,analog_id,source", "nyc,rcp85,x,median\n");
    CHECK_THROWS_AS(parse_analog_csv(bad_source), InputError);
    auto gcm = table("target_city_id,scenario,analog_id,source", "nyc,rcp45,x,gcm:CCSM4\n");
    CHECK(parse_analog_csv(gcm)[0].source == "gcm:CCSM4");

    auto pop = table("city_id,sector,year,service_population", "nyc,water,2010,0\n");
    CHECK_THROWS_AS(parse_population_csv(pop), InputError);
}

TEST_CASE("tables round-trip through their writers") {
    const std::string body =
        "nyc,electricity,2010,7,350000,MWh\n"
        "nyc,water,2010,7,1234567.891,m3\n"
        "chi,water,2011,8,0.1,m3\n";
    auto in = table(kDemand, body);
    const auto rows = parse_demand_csv(in);
    std::ostringstream out;
    write_demand_csv(out, rows);
    CHECK(out.str() == kDemand + "\n" + body);
    std::istringstream again(out.str());
    const auto rows2 = parse_demand_csv(again);
    REQUIRE(rows2.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows2[i].value == rows[i].value);

    const std::string cbody = "phx,2012-06-01,41,22.5,10,15,3.2,0\n";
    auto cin = table(kClimate, cbody);
    std::ostringstream cout_;
    write_climate_csv(cout_, parse_climate_csv(cin));
    CHECK(cout_.str() == kClimate + "\n" + cbody);
}

TEST_CASE("bundle saves and loads unchanged") {
    auto b = complete_city("abc", 2010, 2012);
    b.analogs.push_back({"abc", Scenario::rcp85, "abc", "ensemble"});
    const auto dir = std::filesystem::temp_directory_path() / "nexus_ingest_bundle";
    std::filesystem::remove_all(dir);
    save_bundle(b, dir);
    const auto loaded = load_bundle(dir);
    CHECK(loaded.cities.size() == 1);
    CHECK(loaded.demand.size() == b.demand.size());
    CHECK(loaded.climate.size() == b.climate.size());
    CHECK(loaded.analogs.size() == 1);
    CHECK_FALSE(loaded.ssp.has_value());
    std::filesystem::remove(dir / files::demand);
    CHECK_THROWS_WITH_AS(load_bundle(dir), doctest::Contains("demand.csv"), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("complete city validates clean") {
    const auto b = complete_city("abc", 2007, 2018);
    const std::vector<int> summer{6, 7, 8, 9};
    const auto r = validate_bundle(b, {2007, 2018}, summer);
    REQUIRE(r.cities.size() == 1);
    CHECK_FALSE(r.cities[0].excluded);
    CHECK(r.cities[0].missing_demand.empty());
    CHECK(r.cities[0].missing_climate_days.empty());
    CHECK(r.all_usable());
    CHECK(r.cities[0].summer_share_water.value() == doctest::Approx(4.0 / 12.0));
}

TEST_CASE("single missing month is listed but kept") {
    auto b = complete_city("abc", 2007, 2018);
    std::erase_if(b.demand, [](const DemandRecord& d) {
        return d.sector == Sector::water && d.year == 2010 && d.month == 7;
    });
    const std::vector<int> summer{6, 7, 8, 9};
    const auto r = validate_bundle(b, {2007, 2018}, summer);
    REQUIRE(r.cities[0].missing_demand.size() == 1);
    CHECK(r.cities[0].missing_demand[0] == DemandGap{Sector::water, 2010, 7});
    CHECK_FALSE(r.cities[0].excluded);
    CHECK(r.cities[0].summer_coverage_water == doctest::Approx(47.0 / 48.0));
}

TEST_CASE("summer coverage below threshold excludes the city") {
    auto b = complete_city("abc", 2007, 2018);
    // 10 of 48 summer months removed leaves 79.2% < 80%.
    int dropped = 0;
    std::erase_if(b.demand, [&](const DemandRecord& d) {
        if (d.sector == Sector::electricity && d.month >= 6 && d.month <= 9 && dropped < 10) {
            ++dropped;
            return true;
        }
        return false;
    });
    const std::vector<int> summer{6, 7, 8, 9};
    const auto r = validate_bundle(b, {2007, 2018}, summer);
    CHECK(r.cities[0].excluded);
    CHECK_FALSE(r.all_usable());
    CHECK(r.included_cities().empty());

    // Nine removed leaves 81.25%, still usable.
    auto b2 = complete_city("abc", 2007, 2018);
    dropped = 0;
    std::erase_if(b2.demand, [&](const DemandRecord& d) {
        if (d.sector == Sector::electricity && d.month >= 6 && d.month <= 9 && dropped < 9) {
            ++dropped;
            return true;
        }
        return false;
    });
    CHECK_FALSE(validate_bundle(b2, {2007, 2018}, summer).cities[0].excluded);
}

TEST_CASE("climate and population gaps") {
    auto b = complete_city("abc", 2007, 2018);
    b.climate.erase(b.climate.begin() + 100, b.climate.begin() + 400);
    std::erase_if(b.population, [](const PopulationRecord& p) { return p.year == 2013; });
    b.analogs.push_back({"abc", Scenario::rcp45, "ghost", "ensemble"});
    const std::vector<int> summer{6, 7, 8, 9};
    const auto r = validate_bundle(b, {2007, 2018}, summer);
    CHECK(r.cities[0].missing_climate_days.size() == 300);
    CHECK(r.cities[0].missing_population.size() == 2);
    CHECK(r.cities[0].excluded);
    REQUIRE(r.bundle_issues.size() == 1);
    CHECK(r.bundle_issues[0].find("ghost") != std::string::npos);
}

TEST_CASE("validation is pure") {
    const auto b = complete_city("abc", 2007, 2010);
    const std::vector<int> summer{6, 7, 8, 9};
    const auto a = validate_bundle(b, {2007, 2010}, summer);
    const auto c = validate_bundle(b, {2007, 2010}, summer);
    CHECK(a == c);
    CHECK(validation_report_json(a) == validation_report_json(c));
}
