#include "d2af/prompts.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace d2af;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::filesystem::path kData = D2AF_DATA_DIR;

} // namespace

TEST(Templates, ShippedFilesMatchBuiltins) {
    for (PromptTemplate t : kAllTemplates) {
        const auto path = kData / "templates" / (std::string(to_string(t)) + ".txt");
        ASSERT_TRUE(std::filesystem::exists(path)) << path;
        EXPECT_EQ(trim(slurp(path)), default_template_text(t)) << to_string(t);
    }
    const TemplateSet loaded = TemplateSet::load_dir(kData / "templates");
    const TemplateSet builtin;
    for (PromptTemplate t : kAllTemplates) EXPECT_EQ(loaded.text(t), builtin.text(t));
}

TEST(Templates, PlaceholdersPerTemplate) {
    const TemplateSet s;
    EXPECT_EQ(placeholders(s.text(PromptTemplate::category_detect)), std::vector<std::string>{"cls_list"});
    for (PromptTemplate t : kClosedTemplates)
        EXPECT_EQ(placeholders(s.text(t)), (std::vector<std::string>{"box", "cls"}));
    EXPECT_TRUE(placeholders(s.text(PromptTemplate::open_set)).empty());
}

TEST(Templates, WordLimitsMatchTheirText) {
    EXPECT_NE(default_template_text(PromptTemplate::closed_short).find("5 words"), std::string_view::npos);
    EXPECT_NE(default_template_text(PromptTemplate::closed_mid).find("10 words"), std::string_view::npos);
    EXPECT_NE(default_template_text(PromptTemplate::closed_long).find("20 words"), std::string_view::npos);
    EXPECT_EQ(template_word_limit(PromptTemplate::closed_short), 5);
    EXPECT_EQ(template_word_limit(PromptTemplate::closed_mid), 10);
    EXPECT_EQ(template_word_limit(PromptTemplate::closed_long), 20);
}

TEST(Templates, NamesRoundTrip) {
    for (PromptTemplate t : kAllTemplates) EXPECT_EQ(template_from_string(to_string(t)), t);
    EXPECT_THROW(template_from_string("closed"), InvalidInput);
}

TEST(Render, SubstitutesEverySlot) {
    EXPECT_EQ(render("a {x} b {y} {x}", {{"x", "1"}, {"y", "two"}}), "a 1 b two 1");
    EXPECT_EQ(render("plain", {}), "plain");
    const TemplateSet s;
    const auto txt = s.render(PromptTemplate::closed_short, {{"box", "[1,2,3,4]"}, {"cls", "dog"}});
    EXPECT_NE(txt.find("bounding box [1,2,3,4]"), std::string::npos);
    EXPECT_NE(txt.find("bounding box: dog."), std::string::npos);
    EXPECT_EQ(txt.find('{'), std::string::npos);
}

TEST(Render, SlotSetMustMatchExactly) {
    EXPECT_THROW(render("{a} {b}", {{"a", "1"}}), InvalidInput);
    EXPECT_THROW(render("{a}", {{"a", "1"}, {"b", "2"}}), InvalidInput);
    EXPECT_THROW(render("none", {{"a", "1"}}), InvalidInput);
}

TEST(TemplateSet, RejectsWrongPlaceholders) {
    TemplateSet s;
    EXPECT_THROW(s.set(PromptTemplate::closed_mid, "describe {box}"), ConfigError);
    EXPECT_THROW(s.set(PromptTemplate::open_set, "list {cls}"), ConfigError);
    s.set(PromptTemplate::closed_mid, "describe {cls} at {box}");
    EXPECT_EQ(s.render(PromptTemplate::closed_mid, {{"box", "[0,0,1,1]"}, {"cls", "cat"}}), "describe cat at [0,0,1,1]");
}

TEST(TemplateSet, LoadDirOverridesAndFallsBack) {
    const auto dir = std::filesystem::temp_directory_path() / "d2af_test_templates";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "open_set.txt") << "  list things  \n";
    const auto s = TemplateSet::load_dir(dir);
    EXPECT_EQ(s.text(PromptTemplate::open_set), "list things");
    EXPECT_EQ(s.text(PromptTemplate::closed_long), default_template_text(PromptTemplate::closed_long));
    std::ofstream(dir / "closed_short.txt") << "no slots";
    EXPECT_THROW(TemplateSet::load_dir(dir), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(BoxSlot, RoundsAndParses) {
    EXPECT_EQ(box_slot(make_box(1.4, 2.6, 10.5, 20.49)), "[1,3,11,20]");
    const auto b = parse_box_slot("[1,3,11,20]");
    ASSERT_TRUE(b);
    EXPECT_EQ(*b, make_box(1, 3, 11, 20));
    EXPECT_FALSE(parse_box_slot("1,3,11,20"));
    EXPECT_FALSE(parse_box_slot("[1,3,11]"));
    EXPECT_FALSE(parse_box_slot("[5,5,1,1]"));
}

TEST(ListResponse, StripsMarkersAndBlankLines) {
    const auto got = parse_list_response("1. person\n\n- dog\n* cup \n2) bowl\n\xE2\x80\xA2 fork\n  car\n");
    EXPECT_EQ(got, (std::vector<std::string>{"person", "dog", "cup", "bowl", "fork", "car"}));
    EXPECT_TRUE(parse_list_response("").empty());
    // a leading number that is part of the text stays
    EXPECT_EQ(parse_list_response("3 cups on a table"), std::vector<std::string>{"3 cups on a table"});
}

TEST(Categories, ShippedListHas80Names) {
    const auto names = load_lines(kData / "categories.txt");
    EXPECT_EQ(names.size(), 80u);
    EXPECT_EQ(names.front(), "person");
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), 80u);
}
