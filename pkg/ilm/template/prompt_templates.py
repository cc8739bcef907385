# Prompt template definitions per task: fields each template may reference,
# ten templates used for training (and seen evaluation) and one held out for
# unseen evaluation.
TEMPLATE_DEFINITIONS = {
    "sequential": {
        "fields": ["user", "history"],
        "train": [
            "user {user} has interacted with {history} . what is the next item ?",
            "given the history {history} of user {user} , predict the next item .",
            "{user} watched {history} . which item comes next ?",
            "here is the history of {user} : {history} . recommend the next item .",
            "user {user} recently liked {history} . what should the user see next ?",
            "according to {history} , what will user {user} pick next ?",
            "the sequence of {user} is {history} . next item ?",
            "{history} were chosen by user {user} . guess the following item .",
            "what item should follow {history} for user {user} ?",
            "user {user} history : {history} . predict the next choice .",
        ],
        "unseen": [
            "considering that {user} went through {history} , which item would the user want after that ?",
        ],
    },
    "straightforward": {
        "fields": ["user"],
        "train": [
            "what item should we recommend to user {user} ?",
            "recommend an item for {user} .",
            "which item would user {user} like ?",
            "pick an item for user {user} .",
            "user {user} needs a recommendation . which item ?",
            "suggest something to {user} .",
            "what will user {user} enjoy ?",
            "give user {user} an item recommendation .",
            "{user} is looking for an item . what do you recommend ?",
            "choose the best item for user {user} .",
        ],
        "unseen": [
            "if you had to select a single item that user {user} would enjoy , which would it be ?",
        ],
    },
    "description": {
        "fields": ["item"],
        "train": [
            "describe {item}",
            "what is {item} about ?",
            "give a short description of {item} .",
        ],
        "unseen": [
            "tell me about {item} .",
        ],
    },
}

REGIMES = ("seen", "unseen")
