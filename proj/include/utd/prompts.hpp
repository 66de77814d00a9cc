#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "utd/corpus.hpp"
#include "utd/error.hpp"
#include "utd/json_io.hpp"

namespace utd {

// Placeholders substituted into the LLM templates below.
inline constexpr std::string_view kDescriptionSlot = "<INPUT TEXTUAL DESCRIPTION>";
inline constexpr std::string_view kActivitiesSlot = "<INPUT ACTIVITIES DESCRIPTION>";

inline constexpr std::string_view kNoActivitySentinel = "No activity is visible.";

namespace prompt_text {

inline constexpr std::string_view vlm_describe = "Describe the objects relationships in the photo.";

inline constexpr std::string_view extract_objects =
    "<s>[INST] You are an intelligent chatbot designed to extract requested information from the "
    "textual description of an image. I will give you a textual description of the image. List ALL "
    "objects visible in the image. An object is anything that has a fixed shape or form, that you "
    "can touch or see. Name each object with one noun or a maximum of two words. Skip uncertain "
    "objects. The textual description of the image: \"<INPUT TEXTUAL DESCRIPTION>\" DO NOT PROVIDE "
    "ANY EXTRA INFORMATION ABOUT OBJECT PROPERTIES OR RELATIONSHIPS TO OTHER OBJECTS IN "
    "PARENTHESES. DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR EXPLANATION. [/INST] Comprehensive "
    "enumerated list of objects:";

inline constexpr std::string_view extract_activities =
    "<s>[INST] You are an intelligent chatbot designed to extract requested information from the "
    "textual description of an image. I will give you a textual description of the image. List all "
    "VISIBLE activities in the image. Activity is lively action or movement. Name each activity "
    "with a concise phrase SKIP possible or implied activities that are not visible. If no activity "
    "is visible, reply \"No activity is visible.\" DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR "
    "EXPLANATION. The textual description of the image: \"<INPUT TEXTUAL DESCRIPTION>\" [/INST] "
    "Comprehensive enumerated list of activities:";

inline constexpr std::string_view derive_verbs =
    "<s>[INST] You are an intelligent chatbot designed to extract requested information from the "
    "textual description of an image. I will give you a list of visible activities of the image. "
    "Your task is to delete information about objects from this description. Replace all objects "
    "in this list with \"someone\" or \"something,\" but keep the activity. If you have to, you may "
    "delete some details, but delete ALL object information. If the input is \"No activity is "
    "visible.\", keep it \"No activity is visible.\" DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR "
    "EXPLANATION. The list of visible activities: \"<INPUT ACTIVITIES DESCRIPTION>\" [/INST] "
    "Post-processed enumerated list of activities:";

inline constexpr std::string_view summarize_15w =
    "<s>[INST] You are an intelligent chatbot designed to extract requested information from the "
    "textual description of an image. Summarize the following image description in 15 words: "
    "\"<INPUT TEXTUAL DESCRIPTION>\" [/INST] 15-words summary:";

// Embedding instructions, zero-shot classification.
inline constexpr std::string_view cls_desc_single =
    "Given a video frame description, retrieve the activity depicted in this video.";
inline constexpr std::string_view cls_desc_seq =
    "Given descriptions of video frames, retrieve the activity depicted in this video.";
inline constexpr std::string_view cls_objects_single =
    "Given a list of objects visible on the video frame, retrieve the activity depicted in this video.";
inline constexpr std::string_view cls_objects_seq =
    "Given lists of objects visible on the video frames, retrieve the activity depicted in this video.";
inline constexpr std::string_view cls_actions_single =
    "Given a description of actions visible on the video frame, retrieve the activity depicted in "
    "this video.";
inline constexpr std::string_view cls_actions_seq =
    "Given a description of actions visible on the video frames, retrieve the activity depicted in "
    "this video.";
inline constexpr std::string_view cls_label_single =
    "Given an activity, retrieve a video frame description that may depict this activity.";
inline constexpr std::string_view cls_label_seq =
    "Given an activity, retrieve a video description that may depict this activity.";

// Embedding instructions, text-to-video retrieval.
inline constexpr std::string_view ret_desc_single =
    "Given a description of a single video frame, retrieve a short description of the full video.";
inline constexpr std::string_view ret_desc_seq =
    "Given descriptions of video frames, retrieve a short description of the full video.";
inline constexpr std::string_view ret_objects_single =
    "Given a list of objects visible on the video frame, retrieve a short video description.";
inline constexpr std::string_view ret_objects_seq =
    "Given lists of objects visible on the video frames, retrieve a short video description.";
inline constexpr std::string_view ret_actions_single =
    "Given a description of actions visible on the video frame, retrieve a short video description.";
inline constexpr std::string_view ret_actions_seq =
    "Given a description of actions visible on the video frames, retrieve a short video description.";
inline constexpr std::string_view ret_caption_single =
    "Given a short video description, retrieve a description of a specific frame within that video.";
inline constexpr std::string_view ret_caption_seq =
    "Given a short video description, retrieve another description of this video.";

// Debiasing panel variants (objects, sequence-of-frames). Variant 0 of each
// list coincides with the single-prompt instruction above.
inline constexpr std::array<std::string_view, 3> debias_ret_objects{
    "Given lists of objects visible on the video frames, retrieve a short video description.",
    "Using lists of objects seen in video frames, retrieve a brief description of the video.",
    "From lists of objects present in video frames, retrieve a concise video description.",
};
inline constexpr std::array<std::string_view, 3> debias_ret_captions{
    "Given a short video description, retrieve another description of this video.",
    "Use a brief video description as a query to retrieve an alternative description of the same "
    "video.",
    "Given a concise video description, retrieve another description for that video.",
};
inline constexpr std::array<std::string_view, 3> debias_cls_objects{
    "Given lists of objects visible on the video frames, retrieve the activity depicted in this "
    "video.",
    "Using lists of objects seen in video frames, retrieve the activity captured in the video.",
    "From lists of objects present in video frames, retrieve the activity that the video shows.",
};

} // namespace prompt_text

/// Wraps an instruction and input into the embedding model's query format.
inline std::string embedding_input(std::string_view instruction, std::string_view text) {
    std::string out = "Instruct: ";
    out += instruction;
    out += "\nQuery: ";
    out += text;
    return out;
}

enum class Arity { single_frame, multi_frame };
enum class Side { video_side, query_side };

struct InstructionPrompt {
    std::string text;
    Side side = Side::video_side;
    Task task = Task::classification;
    std::optional<Concept> family;  // unset for the label/caption side
    Arity arity = Arity::single_frame;
    int variant = 0;                 // 0..2 for debiasing panels
};

/// Instruction for the video-side text of a concept. obj_comp_act_15w shares
/// the obj_comp_act wording.
inline InstructionPrompt video_instruction(Task task, Concept family, Arity arity) {
    using namespace prompt_text;
    bool seq = arity == Arity::multi_frame;
    std::string_view text;
    switch (family) {
    case Concept::obj_comp_act:
    case Concept::obj_comp_act_15w:
        text = task == Task::classification ? (seq ? cls_desc_seq : cls_desc_single)
                                            : (seq ? ret_desc_seq : ret_desc_single);
        break;
    case Concept::objects:
        text = task == Task::classification ? (seq ? cls_objects_seq : cls_objects_single)
                                            : (seq ? ret_objects_seq : ret_objects_single);
        break;
    case Concept::activities:
    case Concept::verbs:
        text = task == Task::classification ? (seq ? cls_actions_seq : cls_actions_single)
                                            : (seq ? ret_actions_seq : ret_actions_single);
        break;
    }
    return {std::string(text), Side::video_side, task, family, arity, 0};
}

/// Instruction for class labels (classification) or captions (retrieval).
inline InstructionPrompt target_instruction(Task task, Arity arity) {
    using namespace prompt_text;
    bool seq = arity == Arity::multi_frame;
    std::string_view text = task == Task::classification ? (seq ? cls_label_seq : cls_label_single)
                                                         : (seq ? ret_caption_seq : ret_caption_single);
    return {std::string(text), Side::query_side, task, std::nullopt, arity, 0};
}

/// The three video-side variants used by debiasing panels (objects,
/// sequence-of-frames).
inline std::array<InstructionPrompt, 3> panel_video_instructions(Task task) {
    const auto& texts = task == Task::classification ? prompt_text::debias_cls_objects
                                                     : prompt_text::debias_ret_objects;
    std::array<InstructionPrompt, 3> out;
    for (int v = 0; v < 3; ++v)
        out[v] = {std::string(texts[v]), Side::video_side, task, Concept::objects, Arity::multi_frame, v};
    return out;
}

/// The three caption-side variants for retrieval panels.
inline std::array<InstructionPrompt, 3> panel_query_instructions() {
    std::array<InstructionPrompt, 3> out;
    for (int v = 0; v < 3; ++v)
        out[v] = {std::string(prompt_text::debias_ret_captions[v]), Side::query_side, Task::retrieval,
                  std::nullopt, Arity::multi_frame, v};
    return out;
}

// ---------------------------------------------------------------------------
// LLM prompt library with few-shot exemplars

struct Exemplar {
    std::string input;
    std::string output;  // enumerated list, as the model is expected to answer
};

inline constexpr std::size_t kObjectShots = 3;
inline constexpr std::size_t kActivityShots = 3;
inline constexpr std::size_t kVerbShots = 5;

/// One chat turn of a rendered LLM request.
struct ChatTurn {
    std::string role;  // "user" or "assistant"
    std::string content;
};

struct PromptLibrary {
    std::string vlm_describe{prompt_text::vlm_describe};
    std::string extract_objects{prompt_text::extract_objects};
    std::string extract_activities{prompt_text::extract_activities};
    std::string derive_verbs{prompt_text::derive_verbs};
    std::string summarize_15w{prompt_text::summarize_15w};

    std::vector<Exemplar> object_shots;
    std::vector<Exemplar> activity_shots;
    std::vector<Exemplar> verb_shots;

    static PromptLibrary defaults();

    /// Replaces the exemplars with the contents of a JSON file shaped like
    /// share/utd/fewshot.json. Shot counts must stay 3/3/5.
    void load_exemplars(const std::filesystem::path& path);

    void check() const {
        if (object_shots.size() != kObjectShots || activity_shots.size() != kActivityShots ||
            verb_shots.size() != kVerbShots)
            fail(ErrorKind::Schema, "few-shot exemplar counts must be 3 (objects), 3 (activities), 5 (verbs)");
    }

    /// Identifies the prompt-plus-shots configuration for cache keys.
    std::string fingerprint(std::string_view template_text, const std::vector<Exemplar>& shots) const {
        std::string s(template_text);
        for (const auto& e : shots)
            s += "\x1f" + e.input + "\x1e" + e.output;
        return s;
    }
};

inline std::string substitute(std::string_view templ, std::string_view slot, std::string_view value) {
    std::string out(templ);
    auto pos = out.find(slot);
    if (pos == std::string::npos)
        fail(ErrorKind::Schema, "prompt template lacks slot " + std::string(slot));
    out.replace(pos, slot.size(), value);
    return out;
}

/// Renders a Mistral-instruct template as one raw completion prompt, with the
/// exemplars as earlier closed turns.
inline std::string render_completion(std::string_view templ, std::string_view slot,
                                     const std::vector<Exemplar>& shots, std::string_view input) {
    std::string out;
    bool first = true;
    auto turn = [&](std::string_view value) {
        std::string t = substitute(templ, slot, value);
        if (!first && t.rfind("<s>", 0) == 0)
            t.erase(0, 3);
        first = false;
        return t;
    };
    for (const auto& e : shots)
        out += turn(e.input) + " " + e.output + "</s>";
    out += turn(input);
    return out;
}

/// Renders the same template as chat turns: the [INST] body plus the answer
/// cue becomes a user message; exemplar answers become assistant messages.
inline std::vector<ChatTurn> render_chat(std::string_view templ, std::string_view slot,
                                         const std::vector<Exemplar>& shots, std::string_view input) {
    auto user_text = [&](std::string_view value) {
        std::string t = substitute(templ, slot, value);
        constexpr std::string_view open = "[INST] ", close = " [/INST] ";
        auto a = t.find(open);
        auto b = t.find(close);
        if (a == std::string::npos || b == std::string::npos || b < a)
            return t;
        return t.substr(a + open.size(), b - a - open.size()) + "\n" + t.substr(b + close.size());
    };
    std::vector<ChatTurn> turns;
    for (const auto& e : shots) {
        turns.push_back({"user", user_text(e.input)});
        turns.push_back({"assistant", e.output});
    }
    turns.push_back({"user", user_text(input)});
    return turns;
}

inline PromptLibrary PromptLibrary::defaults() {
    // Stand-in demonstrations; the original exemplars are not public. Edit
    // share/utd/fewshot.json and pass it with --fewshot to replace them.
    PromptLibrary lib;
    lib.object_shots = {
        {"The image shows a wooden table with a lamp on it, placed next to a window with white "
         "curtains. A cat is sleeping on a cushion near the table.",
         "1. table\n2. lamp\n3. window\n4. curtains\n5. cat\n6. cushion"},
        {"A man in a red jacket is riding a bicycle along a paved road lined with trees, while a "
         "car is parked on the side of the road.",
         "1. man\n2. jacket\n3. bicycle\n4. road\n5. trees\n6. car"},
        {"In the kitchen, a woman is cutting vegetables on a cutting board with a knife. A pot is "
         "on the stove behind her.",
         "1. woman\n2. vegetables\n3. cutting board\n4. knife\n5. pot\n6. stove"},
    };
    lib.activity_shots = {
        {"A man in a red jacket is riding a bicycle along a paved road lined with trees, while a "
         "car is parked on the side of the road.",
         "1. man riding a bicycle"},
        {"In the kitchen, a woman is cutting vegetables on a cutting board with a knife while a "
         "child watches her and holds a cup.",
         "1. woman cutting vegetables with a knife\n2. child watching\n3. child holding a cup"},
        {"The image shows a wooden table with a lamp on it, placed next to a window with white "
         "curtains.",
         "No activity is visible."},
    };
    lib.verb_shots = {
        {"1. man riding a bicycle", "1. someone riding something"},
        {"1. woman cutting vegetables with a knife\n2. child watching",
         "1. someone cutting something with something\n2. someone watching"},
        {"1. dog catching a frisbee in the park", "1. something catching something"},
        {"1. person playing the guitar\n2. crowd clapping",
         "1. someone playing something\n2. someone clapping"},
        {"No activity is visible.", "No activity is visible."},
    };
    return lib;
}

inline void PromptLibrary::load_exemplars(const std::filesystem::path& path) {
    auto doc = read_json(path);
    auto read_shots = [&](const char* name) {
        std::vector<Exemplar> shots;
        for (const auto& j : field<json>(doc, name, path.string()))
            shots.push_back({field<std::string>(j, "input", path.string()),
                             field<std::string>(j, "output", path.string())});
        return shots;
    };
    object_shots = read_shots("objects");
    activity_shots = read_shots("activities");
    verb_shots = read_shots("verbs");
    check();
}

} // namespace utd
