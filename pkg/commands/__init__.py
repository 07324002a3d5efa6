# Commands package: one Command class per CLI subcommand
