"""Non-native speech recognition adaptation toolkit."""
