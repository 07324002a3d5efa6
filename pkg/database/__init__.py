# Database package: run registry and its migrations
